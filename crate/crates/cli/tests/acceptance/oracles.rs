//! Slow reference computations that share no code with the library.

/// Gauss–Jordan inverse with partial pivoting.
pub fn invert(mut a: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(c, p);
        inv.swap(c, p);
        let d = a[c][c];
        for j in 0..n {
            a[c][j] /= d;
            inv[c][j] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                for j in 0..n {
                    a[r][j] -= f * a[c][j];
                    inv[r][j] -= f * inv[c][j];
                }
            }
        }
    }
    inv
}

/// Shortest simple-path length from `s` to `t` through `nodes`, by
/// enumerating every simple path.
pub fn enumerate_paths(nodes: &[usize], s: usize, t: usize, len: &dyn Fn(usize, usize) -> Option<f64>) -> f64 {
    fn walk(
        u: usize,
        t: usize,
        acc: f64,
        nodes: &[usize],
        on_path: &mut Vec<usize>,
        len: &dyn Fn(usize, usize) -> Option<f64>,
        best: &mut f64,
    ) {
        if u == t {
            *best = best.min(acc);
            return;
        }
        for &v in nodes {
            if on_path.contains(&v) {
                continue;
            }
            if let Some(l) = len(u, v) {
                on_path.push(v);
                walk(v, t, acc + l, nodes, on_path, len, best);
                on_path.pop();
            }
        }
    }
    if s == t {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    walk(s, t, 0.0, nodes, &mut vec![s], len, &mut best);
    best
}

pub struct NodalOracle {
    pub ns: Vec<f64>,
    pub cc: Vec<f64>,
    pub clc: Vec<f64>,
    pub le: Vec<f64>,
}

/// Brute-force nodal metrics of a dense symmetric weight matrix `w`.
pub fn nodal_oracle(w: &[Vec<f64>]) -> NodalOracle {
    let n = w.len();
    let all: Vec<usize> = (0..n).collect();
    let len = |u: usize, v: usize| (w[u][v] > 0.0).then(|| 1.0 / w[u][v]);
    let ns = w.iter().map(|row| row.iter().sum()).collect();
    let cc = (0..n)
        .map(|i| {
            let reach: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| enumerate_paths(&all, i, j, &len))
                .filter(|d| d.is_finite())
                .collect();
            if reach.is_empty() {
                0.0
            } else {
                reach.len() as f64 / reach.iter().sum::<f64>()
            }
        })
        .collect();
    let wmax = w.iter().flatten().fold(0.0f64, |m, &x| m.max(x));
    let hat = |i: usize, j: usize| if wmax > 0.0 { w[i][j] / wmax } else { 0.0 };
    let mut clc = vec![0.0; n];
    let mut le = vec![0.0; n];
    for i in 0..n {
        let nb: Vec<usize> = (0..n).filter(|&j| j != i && w[i][j] > 0.0).collect();
        if nb.len() < 2 {
            continue;
        }
        let pairs = (nb.len() * (nb.len() - 1)) as f64;
        let mut tri = 0.0;
        let mut eff = 0.0;
        for &j in &nb {
            for &h in &nb {
                if j == h {
                    continue;
                }
                tri += (hat(i, j) * hat(i, h) * hat(j, h)).cbrt();
                let sub_len = |u: usize, v: usize| (hat(u, v) > 0.0).then(|| 1.0 / hat(u, v));
                let d = enumerate_paths(&nb, j, h, &sub_len);
                if d.is_finite() {
                    eff += (hat(i, j) * hat(i, h) / d).cbrt();
                }
            }
        }
        clc[i] = tri / pairs;
        le[i] = eff / pairs;
    }
    NodalOracle { ns, cc, clc, le }
}

/// Monic characteristic polynomial (highest degree first), Faddeev–LeVerrier.
pub fn char_poly(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let mul = |x: &[Vec<f64>], y: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| x[i][k] * y[k][j]).sum()).collect()).collect()
    };
    let mut coeffs = vec![1.0];
    let mut m = vec![vec![0.0; n]; n];
    for k in 1..=n {
        let c_prev = *coeffs.last().unwrap();
        m = mul(a, &m);
        for (i, row) in m.iter_mut().enumerate() {
            row[i] += c_prev;
        }
        let am = mul(a, &m);
        let tr: f64 = (0..n).map(|i| am[i][i]).sum();
        coeffs.push(-tr / k as f64);
    }
    coeffs
}

/// Real parts of all roots by Durand–Kerner iteration, ascending.
pub fn poly_roots(coeffs: &[f64]) -> Vec<f64> {
    type C = (f64, f64);
    let mulc = |a: C, b: C| (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0);
    let divc = |a: C, b: C| {
        let d = b.0 * b.0 + b.1 * b.1;
        ((a.0 * b.0 + a.1 * b.1) / d, (a.1 * b.0 - a.0 * b.1) / d)
    };
    let eval = |z: C| {
        coeffs.iter().fold((0.0, 0.0), |acc, &c| {
            let p = mulc(acc, z);
            (p.0 + c, p.1)
        })
    };
    let deg = coeffs.len() - 1;
    let radius = 1.0 + coeffs.iter().skip(1).fold(0.0f64, |m, c| m.max(c.abs()));
    let mut z: Vec<C> = (0..deg)
        .map(|k| {
            let ang = 0.4 + std::f64::consts::TAU * k as f64 / deg as f64;
            (radius * ang.cos(), radius * ang.sin())
        })
        .collect();
    for _ in 0..5000 {
        let mut moved = 0.0f64;
        for i in 0..deg {
            let mut den = (1.0, 0.0);
            for j in 0..deg {
                if j != i {
                    den = mulc(den, (z[i].0 - z[j].0, z[i].1 - z[j].1));
                }
            }
            let step = divc(eval(z[i]), den);
            z[i] = (z[i].0 - step.0, z[i].1 - step.1);
            moved = moved.max(step.0.abs() + step.1.abs());
        }
        if moved < 1e-16 {
            break;
        }
    }
    let mut re: Vec<f64> = z.iter().map(|c| c.0).collect();
    re.sort_by(f64::total_cmp);
    re
}

/// Chebyshev polynomial `T_m(x)` on [−1, 1] in closed form.
pub fn chebyshev(m: usize, x: f64) -> f64 {
    (m as f64 * x.clamp(-1.0, 1.0).acos()).cos()
}
