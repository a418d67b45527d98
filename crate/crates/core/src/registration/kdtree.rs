use nalgebra::Point3;

const LEAF_SIZE: usize = 8;

#[derive(Clone, Copy, Debug)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { dim: u8, value: f64, left: u32, right: u32 },
}

/// Median-split 3-d tree for exact nearest-neighbour queries.
///
/// Ties on distance resolve to the smallest original point index, so query
/// results are identical to an exhaustive scan that keeps the first minimum.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    indices: Vec<u32>,
    nodes: Vec<Node>,
}

/// Squared Euclidean distance, evaluated as `dx² + dy² + dz²`.
#[inline]
pub fn squared_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl KdTree {
    pub fn build(points: &[Point3<f64>]) -> Self {
        assert!(points.len() <= u32::MAX as usize, "too many points for KdTree");
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        if !points.is_empty() {
            build_node(points, &mut order, 0, &mut nodes);
        }
        let permuted = order
            .iter()
            .map(|&i| {
                let p = &points[i as usize];
                [p.x, p.y, p.z]
            })
            .collect();
        Self {
            points: permuted,
            indices: order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(index, squared distance)` of the point nearest to `query`.
    pub fn nearest(&self, query: &Point3<f64>) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let q = [query.x, query.y, query.z];
        let mut best = (u32::MAX, f64::INFINITY);
        self.search(0, &q, &mut best);
        Some((best.0 as usize, best.1))
    }

    fn search(&self, node: usize, q: &[f64; 3], best: &mut (u32, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for k in start as usize..end as usize {
                    let d = squared_distance(q, &self.points[k]);
                    let idx = self.indices[k];
                    if d < best.1 || (d == best.1 && idx < best.0) {
                        *best = (idx, d);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim as usize] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near as usize, q, best);
                // Equal distance on the far side may still win the index
                // tie-break, so only strictly farther subtrees are pruned.
                if diff * diff <= best.1 {
                    self.search(far as usize, q, best);
                }
            }
        }
    }
}

fn build_node(points: &[Point3<f64>], order: &mut [u32], offset: usize, nodes: &mut Vec<Node>) -> u32 {
    let id = nodes.len();
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset as u32,
            end: (offset + order.len()) as u32,
        });
        return id as u32;
    }

    // split along the axis of largest extent
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        let p = &points[i as usize];
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let dim = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);

    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][dim].total_cmp(&points[b as usize][dim])
    });
    let value = points[order[mid] as usize][dim];

    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (left_part, right_part) = order.split_at_mut(mid);
    let left = build_node(points, left_part, offset, nodes);
    let right = build_node(points, right_part, offset + mid, nodes);
    nodes[id] = Node::Split {
        dim: dim as u8,
        value,
        left,
        right,
    };
    id as u32
}
