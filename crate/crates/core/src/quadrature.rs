//! Symmetric quadrature rules on triangles in barycentric form.
//!
//! Weights sum to one; multiply by the triangle area on use.

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
    degree: usize,
}

impl QuadratureRule {
    pub fn new(points: Vec<[f64; 3]>, weights: Vec<f64>, degree: usize) -> Self {
        assert_eq!(points.len(), weights.len());
        Self { points, weights, degree }
    }

    /// Three interior points, exact for quadratics.
    pub fn degree2() -> Self {
        let mut r = Builder::default();
        r.orbit3(2.0 / 3.0, 1.0 / 3.0);
        r.finish(2)
    }

    /// Dunavant's 12-point rule, exact through degree 6.
    pub fn degree6() -> Self {
        let mut r = Builder::default();
        r.orbit3(0.501426509658179, 0.116786275726379);
        r.orbit3(0.873821971016996, 0.050844906370207);
        r.orbit6(0.053145049844817, 0.310352451033784, 0.082851075618374);
        r.finish(6)
    }

    /// Dunavant's 16-point rule, exact through degree 8.
    pub fn degree8() -> Self {
        let mut r = Builder::default();
        r.centroid(0.144315607677787);
        r.orbit3(0.081414823414554, 0.095091634267285);
        r.orbit3(0.658861384496480, 0.103217370534718);
        r.orbit3(0.898905543365938, 0.032458497623198);
        r.orbit6(0.008394777409958, 0.263112829634638, 0.027230314174435);
        r.finish(8)
    }

    /// Rule used for every form on a `P_order` space: exact for products of
    /// four basis functions.
    pub fn for_order(order: usize) -> Self {
        match order {
            1 => Self::degree6(),
            2 => Self::degree8(),
            _ => panic!("unsupported polynomial order {order}"),
        }
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Default)]
struct Builder {
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl Builder {
    fn centroid(&mut self, w: f64) {
        self.points.push([1.0 / 3.0; 3]);
        self.weights.push(w);
    }

    // (a, b, b) and its permutations, b = (1 - a) / 2.
    fn orbit3(&mut self, a: f64, w: f64) {
        let b = 0.5 * (1.0 - a);
        for p in [[a, b, b], [b, a, b], [b, b, a]] {
            self.points.push(p);
            self.weights.push(w);
        }
    }

    // All six permutations of (a, b, 1 - a - b).
    fn orbit6(&mut self, a: f64, b: f64, w: f64) {
        let c = 1.0 - a - b;
        for p in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
            self.points.push(p);
            self.weights.push(w);
        }
    }

    fn finish(self, degree: usize) -> QuadratureRule {
        QuadratureRule::new(self.points, self.weights, degree)
    }
}
