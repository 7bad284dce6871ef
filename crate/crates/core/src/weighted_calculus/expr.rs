//! Closed-form field expressions. Leaves are polynomials or trigonometric
//! series; interior nodes apply the weighted operators. Evaluation returns
//! lower-index component jets at a point.

use serde::{Deserialize, Serialize};

use crate::chart_geometry::{Chart, TrigSeries};
use crate::error::{Error, Result};
use crate::jet::{Jet, MAX_ORDER};
use crate::poly::Poly;
use crate::tensor::{Geom, TJet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rank {
    Scalar,
    Vector,
    Sym2,
}

impl Rank {
    pub fn order(self) -> usize {
        match self {
            Rank::Scalar => 0,
            Rank::Vector => 1,
            Rank::Sym2 => 2,
        }
    }
}

/// Coordinate blocks of a product chart `S^ell × R^m` (sphere coordinates first).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    Full,
    Sphere,
    Euclid,
    /// Everything except the (sphere, sphere) slots.
    NonSphere,
}

impl Block {
    fn keeps(self, ell: usize, i: usize, j: usize) -> bool {
        let (si, sj) = (i < ell, j < ell);
        match self {
            Block::Full => true,
            Block::Sphere => si && sj,
            Block::Euclid => !si && !sj,
            Block::NonSphere => !(si && sj),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    Grad,
    Hess,
    DriftLaplacian,
    Divf,
    DivfStar,
    P,
    L,
    /// Zero outside the given block.
    Restrict(Block),
    /// `Tr_{g^1}(h_{NN}) / ell`, the sphere-trace part.
    SphereTrace,
    /// `h_{NN} − (Tr_{g^1} h_{NN} / ell) g^1`.
    SphereTraceFree,
}

impl Op {
    fn depth(self) -> usize {
        match self {
            Op::Grad | Op::Divf | Op::DivfStar => 1,
            Op::Hess | Op::DriftLaplacian | Op::P | Op::L => 2,
            Op::Restrict(_) | Op::SphereTrace | Op::SphereTraceFree => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FieldExpr {
    Zero(Rank),
    /// Scalar polynomial in ambient coordinates of the chart.
    Poly(Poly),
    /// Scalar trigonometric series in chart coordinates.
    Trig(TrigSeries),
    /// Vector field by contravariant components (scalar expressions) along chart coordinates.
    Vector(Vec<FieldExpr>),
    /// Symmetric 2-tensor by covariant components, `n*n` scalar expressions row-major.
    Sym(Vec<FieldExpr>),
    /// `factor · g` restricted to a block.
    MetricBlock { block: Block, factor: Box<FieldExpr> },
    Scaled(f64, Box<FieldExpr>),
    Sum(Vec<FieldExpr>),
    /// Scalar expression times a field.
    Times(Box<FieldExpr>, Box<FieldExpr>),
    Apply(Op, Box<FieldExpr>),
}

impl FieldExpr {
    pub fn poly(p: Poly) -> FieldExpr {
        FieldExpr::Poly(p)
    }

    pub fn apply(op: Op, e: FieldExpr) -> FieldExpr {
        FieldExpr::Apply(op, Box::new(e))
    }

    pub fn scaled(self, s: f64) -> FieldExpr {
        FieldExpr::Scaled(s, Box::new(self))
    }

    pub fn plus(self, o: FieldExpr) -> FieldExpr {
        match self {
            FieldExpr::Sum(mut v) => {
                v.push(o);
                FieldExpr::Sum(v)
            }
            s => FieldExpr::Sum(vec![s, o]),
        }
    }

    pub fn minus(self, o: FieldExpr) -> FieldExpr {
        self.plus(o.scaled(-1.0))
    }

    /// Vector field with polynomial contravariant components.
    pub fn poly_vector(comps: Vec<Poly>) -> FieldExpr {
        FieldExpr::Vector(comps.into_iter().map(FieldExpr::Poly).collect())
    }

    /// Symmetric 2-tensor with polynomial covariant components.
    pub fn poly_sym(comps: Vec<Poly>) -> FieldExpr {
        FieldExpr::Sym(comps.into_iter().map(FieldExpr::Poly).collect())
    }

    pub fn metric_block(block: Block, factor: FieldExpr) -> FieldExpr {
        FieldExpr::MetricBlock { block, factor: Box::new(factor) }
    }

    pub fn rank(&self) -> Result<Rank> {
        Ok(match self {
            FieldExpr::Zero(r) => *r,
            FieldExpr::Poly(_) | FieldExpr::Trig(_) => Rank::Scalar,
            FieldExpr::Vector(_) => Rank::Vector,
            FieldExpr::Sym(_) | FieldExpr::MetricBlock { .. } => Rank::Sym2,
            FieldExpr::Scaled(_, e) => e.rank()?,
            FieldExpr::Sum(v) => {
                let r = v.first().ok_or_else(|| Error::Rank("empty sum".into()))?.rank()?;
                for e in v {
                    if e.rank()? != r {
                        return Err(Error::Rank("sum of fields of different rank".into()));
                    }
                }
                r
            }
            FieldExpr::Times(s, e) => {
                if s.rank()? != Rank::Scalar {
                    return Err(Error::Rank("left factor of a product must be scalar".into()));
                }
                e.rank()?
            }
            FieldExpr::Apply(op, e) => {
                let r = e.rank()?;
                let want = |ok: bool, what: &str| if ok { Ok(()) } else { Err(Error::Rank(format!("{what} applied to {r:?}"))) };
                match op {
                    Op::Grad => {
                        want(r == Rank::Scalar, "gradient")?;
                        Rank::Vector
                    }
                    Op::Hess => {
                        want(r == Rank::Scalar, "Hessian")?;
                        Rank::Sym2
                    }
                    Op::DriftLaplacian => r,
                    Op::Divf => match r {
                        Rank::Vector => Rank::Scalar,
                        Rank::Sym2 => Rank::Vector,
                        Rank::Scalar => return Err(Error::Rank("div_f of a scalar".into())),
                    },
                    Op::DivfStar => {
                        want(r == Rank::Vector, "div_f*")?;
                        Rank::Sym2
                    }
                    Op::P => {
                        want(r == Rank::Vector, "P")?;
                        Rank::Vector
                    }
                    Op::L => {
                        want(r == Rank::Sym2, "L")?;
                        Rank::Sym2
                    }
                    Op::Restrict(_) => r,
                    Op::SphereTrace => {
                        want(r == Rank::Sym2, "sphere trace")?;
                        Rank::Scalar
                    }
                    Op::SphereTraceFree => {
                        want(r == Rank::Sym2, "sphere trace-free part")?;
                        Rank::Sym2
                    }
                }
            }
        })
    }

    /// Number of derivatives the expression consumes.
    pub fn depth(&self) -> usize {
        match self {
            FieldExpr::Zero(_) | FieldExpr::Poly(_) | FieldExpr::Trig(_) => 0,
            FieldExpr::Vector(v) | FieldExpr::Sym(v) | FieldExpr::Sum(v) => v.iter().map(|e| e.depth()).max().unwrap_or(0),
            FieldExpr::MetricBlock { factor, .. } => factor.depth(),
            FieldExpr::Scaled(_, e) => e.depth(),
            FieldExpr::Times(a, b) => a.depth().max(b.depth()),
            FieldExpr::Apply(op, e) => op.depth() + e.depth(),
        }
    }

    fn needs_geom(&self) -> bool {
        match self {
            FieldExpr::Zero(_) | FieldExpr::Poly(_) | FieldExpr::Trig(_) => false,
            FieldExpr::Vector(_) | FieldExpr::MetricBlock { .. } | FieldExpr::Apply(..) => true,
            FieldExpr::Sym(v) | FieldExpr::Sum(v) => v.iter().any(|e| e.needs_geom()),
            FieldExpr::Scaled(_, e) => e.needs_geom(),
            FieldExpr::Times(a, b) => a.needs_geom() || b.needs_geom(),
        }
    }

    /// Lower-index component jets of the field at `x`, of the requested order.
    pub fn eval(&self, chart: &Chart, x: &[f64], order: usize) -> Result<TJet> {
        let go = (order + self.depth()).max(2);
        if go > MAX_ORDER {
            return Err(Error::InsufficientOrder { have: MAX_ORDER, need: go });
        }
        let geom = if self.needs_geom() { Some(chart.geom_at(x, go)?) } else { None };
        self.eval_with(chart, geom.as_ref(), x, order)
    }

    /// Same as [`FieldExpr::eval`] with a geometry already built at `x`.
    pub fn eval_with(&self, chart: &Chart, geom: Option<&Geom>, x: &[f64], order: usize) -> Result<TJet> {
        let ctx = Ctx { chart, geom, vars: Jet::variables(x, order + self.depth()) };
        let t = self.eval_in(&ctx, order)?;
        if t.order() < order {
            return Err(Error::InsufficientOrder { have: t.order(), need: order });
        }
        Ok(t)
    }

    fn eval_in(&self, ctx: &Ctx, order: usize) -> Result<TJet> {
        let n = ctx.chart.dim;
        Ok(match self {
            FieldExpr::Zero(r) => TJet::zeros_like(&ctx.var(order)[0], n, r.order()),
            FieldExpr::Poly(p) => {
                let amb = ctx.chart.ambient(&ctx.var(order));
                if p.nvars() != amb.len() {
                    return Err(Error::Precondition(format!(
                        "polynomial in {} variables on a chart with {} ambient coordinates",
                        p.nvars(),
                        amb.len()
                    )));
                }
                scalar(n, p.eval(&amb))
            }
            FieldExpr::Trig(s) => scalar(n, s.eval(&ctx.var(order))),
            FieldExpr::Vector(comps) => {
                if comps.len() != n {
                    return Err(Error::Rank(format!("vector with {} components on a {n}-chart", comps.len())));
                }
                let up: Vec<Jet> = comps.iter().map(|c| c.eval_in(ctx, order).map(|t| t.c[0].clone())).collect::<Result<_>>()?;
                let g = &ctx.geom()?.g;
                TJet::from_fn(n, 1, |ix| {
                    let mut acc = up[0].scale(0.0);
                    for (j, u) in up.iter().enumerate() {
                        acc.add_product(1.0, g.at(&[ix[0], j]), u);
                    }
                    acc
                })
            }
            FieldExpr::Sym(comps) => {
                if comps.len() != n * n {
                    return Err(Error::Rank(format!("sym2 with {} components on a {n}-chart", comps.len())));
                }
                let c: Vec<Jet> = comps.iter().map(|c| c.eval_in(ctx, order).map(|t| t.c[0].clone())).collect::<Result<_>>()?;
                TJet { n, rank: 2, c }
            }
            FieldExpr::MetricBlock { block, factor } => {
                let u = factor.eval_in(ctx, order)?.c[0].clone();
                let g = &ctx.geom()?.g;
                let ell = ctx.chart.sphere_dim();
                TJet::from_fn(n, 2, |ix| {
                    if block.keeps(ell, ix[0], ix[1]) {
                        g.at(ix) * &u
                    } else {
                        u.scale(0.0)
                    }
                })
            }
            FieldExpr::Scaled(s, e) => e.eval_in(ctx, order)?.scale(*s),
            FieldExpr::Sum(v) => {
                let mut it = v.iter();
                let first = it.next().ok_or_else(|| Error::Rank("empty sum".into()))?;
                let mut acc = first.eval_in(ctx, order)?;
                for e in it {
                    acc = acc.add(&e.eval_in(ctx, order)?);
                }
                acc
            }
            FieldExpr::Times(s, e) => {
                let u = s.eval_in(ctx, order)?.c[0].clone();
                e.eval_in(ctx, order)?.times(&u)
            }
            FieldExpr::Apply(op, e) => {
                let inner = e.eval_in(ctx, order + op.depth())?;
                let geom = ctx.geom()?;
                let ell = ctx.chart.sphere_dim();
                let out = match op {
                    Op::Grad => geom.grad(&inner),
                    Op::Hess => geom.hess(&inner),
                    Op::DriftLaplacian => geom.drift_laplacian(&inner),
                    Op::Divf => match inner.rank {
                        1 => geom.divf_vec(&inner),
                        _ => geom.divf_sym(&inner),
                    },
                    Op::DivfStar => geom.divf_star(&inner),
                    Op::P => geom.p_op(&inner),
                    Op::L => geom.l_op(&inner),
                    Op::Restrict(b) => restrict(&inner, *b, ell),
                    Op::SphereTrace => sphere_trace(geom, &inner, ell)?,
                    Op::SphereTraceFree => {
                        let u = sphere_trace(geom, &inner, ell)?;
                        let gs = restrict(&geom.g, Block::Sphere, ell);
                        restrict(&inner, Block::Sphere, ell).sub(&gs.times(&u.c[0]))
                    }
                };
                let mut out = out;
                out.n = n;
                out.truncate(order)
            }
        })
    }
}

fn scalar(n: usize, j: Jet) -> TJet {
    TJet { n, rank: 0, c: vec![j] }
}

fn restrict(t: &TJet, b: Block, ell: usize) -> TJet {
    match t.rank {
        2 => TJet::from_fn(t.n, 2, |ix| if b.keeps(ell, ix[0], ix[1]) { t.at(ix).clone() } else { t.at(ix).scale(0.0) }),
        1 => TJet::from_fn(t.n, 1, |ix| if b.keeps(ell, ix[0], ix[0]) { t.at(ix).clone() } else { t.at(ix).scale(0.0) }),
        _ => t.clone(),
    }
}

fn sphere_trace(geom: &Geom, h: &TJet, ell: usize) -> Result<TJet> {
    if ell == 0 {
        return Err(Error::Precondition("sphere block requested on a chart without one".into()));
    }
    let mut acc = geom.cst(0.0);
    for a in 0..ell {
        for b in 0..ell {
            acc.add_product(1.0, geom.gi.at(&[a, b]), h.at(&[a, b]));
        }
    }
    Ok(scalar(h.n, acc.scale(1.0 / ell as f64)))
}

struct Ctx<'a> {
    chart: &'a Chart,
    geom: Option<&'a Geom>,
    vars: Vec<Jet>,
}

impl Ctx<'_> {
    fn var(&self, order: usize) -> Vec<Jet> {
        self.vars.iter().map(|v| v.truncate(order)).collect()
    }

    fn geom(&self) -> Result<&Geom> {
        self.geom.ok_or_else(|| Error::Precondition("expression needs geometry".into()))
    }
}
