//! Axis-aligned Cartesian meshes on a rectangle.
//!
//! Elements are indexed `(i, j)` with `1 <= i <= nx`, `1 <= j <= ny`, so that
//! element `(i, j)` covers `[x_{i-1}, x_i] x [y_{j-1}, y_j]`. Vertical faces
//! `V(i, j)` sit on `x = x_i` (`0 <= i <= nx`, `1 <= j <= ny`) and horizontal
//! faces `H(i, j)` on `y = y_j` (`1 <= i <= nx`, `0 <= j <= ny`).

use crate::error::{HdgError, Result};

/// The rectangle `(x_left, x_right) x (y_bottom, y_top)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain2D {
    pub x_left: f64,
    pub x_right: f64,
    pub y_bottom: f64,
    pub y_top: f64,
}

impl Domain2D {
    pub fn new(x_left: f64, x_right: f64, y_bottom: f64, y_top: f64) -> Result<Self> {
        if !(x_left < x_right) || !(y_bottom < y_top) {
            return Err(HdgError::InvalidMesh(format!(
                "degenerate domain ({x_left}, {x_right}) x ({y_bottom}, {y_top})"
            )));
        }
        Ok(Self {
            x_left,
            x_right,
            y_bottom,
            y_top,
        })
    }

    pub fn square(lo: f64, hi: f64) -> Self {
        Self::new(lo, hi, lo, hi).expect("square domain needs lo < hi")
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_left && x <= self.x_right && y >= self.y_bottom && y <= self.y_top
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Orientation {
    Vertical,
    Horizontal,
}

/// Which part of the domain boundary a face lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Interior,
    Left,
    Right,
    Bottom,
    Top,
}

/// The four sides of an element, in the order left, right, bottom, top.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

    /// Outward unit normal `(n_x, n_y)`.
    pub fn normal(self) -> (f64, f64) {
        match self {
            Side::Left => (-1.0, 0.0),
            Side::Right => (1.0, 0.0),
            Side::Bottom => (0.0, -1.0),
            Side::Top => (0.0, 1.0),
        }
    }

    pub fn orientation(self) -> Orientation {
        match self {
            Side::Left | Side::Right => Orientation::Vertical,
            Side::Bottom | Side::Top => Orientation::Horizontal,
        }
    }
}

/// One-based element index `(i, j)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ElementId {
    pub i: usize,
    pub j: usize,
}

impl ElementId {
    pub fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }
}

/// Canonical face index: orientation plus grid indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FaceId {
    pub orientation: Orientation,
    pub i: usize,
    pub j: usize,
}

impl FaceId {
    pub fn vertical(i: usize, j: usize) -> Self {
        Self {
            orientation: Orientation::Vertical,
            i,
            j,
        }
    }

    pub fn horizontal(i: usize, j: usize) -> Self {
        Self {
            orientation: Orientation::Horizontal,
            i,
            j,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Face {
    pub id: FaceId,
    pub tag: BoundaryTag,
    /// Element on the low-coordinate side (left or below), if any.
    pub minus: Option<ElementId>,
    /// Element on the high-coordinate side (right or above), if any.
    pub plus: Option<ElementId>,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.tag != BoundaryTag::Interior
    }

    pub fn neighbor_count(&self) -> usize {
        usize::from(self.minus.is_some()) + usize::from(self.plus.is_some())
    }
}

/// A face seen from one adjacent element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementFace {
    pub side: Side,
    pub face: Face,
    pub normal: (f64, f64),
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]` of one element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Cell {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    /// Half widths, i.e. the Jacobians of the map from `[-1, 1]`.
    pub fn half_widths(&self) -> (f64, f64) {
        (0.5 * self.width(), 0.5 * self.height())
    }

    pub fn map_x(&self, xi: f64) -> f64 {
        0.5 * (self.x0 + self.x1) + 0.5 * self.width() * xi
    }

    pub fn map_y(&self, eta: f64) -> f64 {
        0.5 * (self.y0 + self.y1) + 0.5 * self.height() * eta
    }

    pub fn to_reference(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (2.0 * x - self.x0 - self.x1) / self.width(),
            (2.0 * y - self.y0 - self.y1) / self.height(),
        )
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

#[derive(Clone, Debug)]
pub struct CartesianMesh {
    pub domain: Domain2D,
    pub x_nodes: Vec<f64>,
    pub y_nodes: Vec<f64>,
    pub nx: usize,
    pub ny: usize,
    /// Largest cell edge.
    pub h: f64,
}

impl CartesianMesh {
    /// Uniform mesh with `nx x ny` cells.
    pub fn uniform(domain: Domain2D, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(HdgError::InvalidMesh(format!(
                "cell counts must be positive, got {nx} x {ny}"
            )));
        }
        let dx = (domain.x_right - domain.x_left) / nx as f64;
        let dy = (domain.y_top - domain.y_bottom) / ny as f64;
        let mut x_nodes: Vec<f64> = (0..=nx).map(|i| domain.x_left + i as f64 * dx).collect();
        let mut y_nodes: Vec<f64> = (0..=ny).map(|j| domain.y_bottom + j as f64 * dy).collect();
        x_nodes[nx] = domain.x_right;
        y_nodes[ny] = domain.y_top;
        Self::from_nodes(domain, x_nodes, y_nodes)
    }

    /// Tensor mesh from explicit node arrays.
    pub fn from_nodes(domain: Domain2D, x_nodes: Vec<f64>, y_nodes: Vec<f64>) -> Result<Self> {
        if x_nodes.len() < 2 || y_nodes.len() < 2 {
            return Err(HdgError::InvalidMesh("need at least one cell per direction".into()));
        }
        let strictly_increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        if !strictly_increasing(&x_nodes) || !strictly_increasing(&y_nodes) {
            return Err(HdgError::InvalidMesh("node arrays must be strictly increasing".into()));
        }
        if x_nodes[0] != domain.x_left
            || *x_nodes.last().unwrap() != domain.x_right
            || y_nodes[0] != domain.y_bottom
            || *y_nodes.last().unwrap() != domain.y_top
        {
            return Err(HdgError::InvalidMesh("node arrays must span the domain".into()));
        }
        let widest = |v: &[f64]| v.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        let h = widest(&x_nodes).max(widest(&y_nodes));
        Ok(Self {
            domain,
            nx: x_nodes.len() - 1,
            ny: y_nodes.len() - 1,
            x_nodes,
            y_nodes,
            h,
        })
    }

    pub fn num_elements(&self) -> usize {
        self.nx * self.ny
    }

    pub fn num_vertical_faces(&self) -> usize {
        (self.nx + 1) * self.ny
    }

    pub fn num_horizontal_faces(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    /// Linear element index, x fastest.
    pub fn element_index(&self, e: ElementId) -> usize {
        (e.j - 1) * self.nx + (e.i - 1)
    }

    pub fn element_id(&self, index: usize) -> ElementId {
        ElementId::new(index % self.nx + 1, index / self.nx + 1)
    }

    pub fn elements(&self) -> impl Iterator<Item = ElementId> + '_ {
        (1..=self.ny).flat_map(move |j| (1..=self.nx).map(move |i| ElementId::new(i, j)))
    }

    pub fn check_element(&self, e: ElementId) -> Result<()> {
        if e.i == 0 || e.i > self.nx || e.j == 0 || e.j > self.ny {
            return Err(HdgError::IndexOutOfRange(format!(
                "element ({}, {}) outside 1..={} x 1..={}",
                e.i, e.j, self.nx, self.ny
            )));
        }
        Ok(())
    }

    pub fn cell(&self, e: ElementId) -> Cell {
        Cell {
            x0: self.x_nodes[e.i - 1],
            x1: self.x_nodes[e.i],
            y0: self.y_nodes[e.j - 1],
            y1: self.y_nodes[e.j],
        }
    }

    /// Linear index of a vertical face `V(i, j)`, `i` fastest.
    pub fn vertical_index(&self, i: usize, j: usize) -> usize {
        (j - 1) * (self.nx + 1) + i
    }

    /// Linear index of a horizontal face `H(i, j)`, `i` fastest.
    pub fn horizontal_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + (i - 1)
    }

    pub fn face(&self, id: FaceId) -> Result<Face> {
        match id.orientation {
            Orientation::Vertical => {
                if id.i > self.nx || id.j == 0 || id.j > self.ny {
                    return Err(HdgError::IndexOutOfRange(format!("vertical face ({}, {})", id.i, id.j)));
                }
                let tag = if id.i == 0 {
                    BoundaryTag::Left
                } else if id.i == self.nx {
                    BoundaryTag::Right
                } else {
                    BoundaryTag::Interior
                };
                Ok(Face {
                    id,
                    tag,
                    minus: (id.i >= 1).then(|| ElementId::new(id.i, id.j)),
                    plus: (id.i < self.nx).then(|| ElementId::new(id.i + 1, id.j)),
                })
            }
            Orientation::Horizontal => {
                if id.j > self.ny || id.i == 0 || id.i > self.nx {
                    return Err(HdgError::IndexOutOfRange(format!("horizontal face ({}, {})", id.i, id.j)));
                }
                let tag = if id.j == 0 {
                    BoundaryTag::Bottom
                } else if id.j == self.ny {
                    BoundaryTag::Top
                } else {
                    BoundaryTag::Interior
                };
                Ok(Face {
                    id,
                    tag,
                    minus: (id.j >= 1).then(|| ElementId::new(id.i, id.j)),
                    plus: (id.j < self.ny).then(|| ElementId::new(id.i, id.j + 1)),
                })
            }
        }
    }

    pub fn vertical_faces(&self) -> impl Iterator<Item = Face> + '_ {
        (1..=self.ny).flat_map(move |j| (0..=self.nx).map(move |i| self.face(FaceId::vertical(i, j)).unwrap()))
    }

    pub fn horizontal_faces(&self) -> impl Iterator<Item = Face> + '_ {
        (0..=self.ny).flat_map(move |j| (1..=self.nx).map(move |i| self.face(FaceId::horizontal(i, j)).unwrap()))
    }

    /// Face id of the given side of an element.
    pub fn side_face_id(&self, e: ElementId, side: Side) -> FaceId {
        match side {
            Side::Left => FaceId::vertical(e.i - 1, e.j),
            Side::Right => FaceId::vertical(e.i, e.j),
            Side::Bottom => FaceId::horizontal(e.i, e.j - 1),
            Side::Top => FaceId::horizontal(e.i, e.j),
        }
    }

    /// The four faces of an element, in the order left, right, bottom, top.
    pub fn element_faces(&self, e: ElementId) -> Result<[ElementFace; 4]> {
        self.check_element(e)?;
        Ok(Side::ALL.map(|side| ElementFace {
            side,
            face: self.face(self.side_face_id(e, side)).unwrap(),
            normal: side.normal(),
        }))
    }

    /// `(minus, plus)` neighbours of a face; `None` marks the boundary.
    pub fn face_neighbors(&self, face: &Face) -> (Option<ElementId>, Option<ElementId>) {
        (face.minus, face.plus)
    }

    /// Element owning a point, with points on element boundaries assigned
    /// to the element to their left (resp. below); the domain's left and
    /// bottom edges belong to the first column (row).
    pub fn locate(&self, x: f64, y: f64) -> Option<ElementId> {
        if !self.domain.contains(x, y) {
            return None;
        }
        let find = |nodes: &[f64], v: f64| -> usize {
            // first node >= v, clamped to [1, n]
            let idx = nodes.partition_point(|&n| n < v);
            idx.clamp(1, nodes.len() - 1)
        };
        Some(ElementId::new(find(&self.x_nodes, x), find(&self.y_nodes, y)))
    }
}
