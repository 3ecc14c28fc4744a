use nalgebra::Vector3;

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize, lo: Vector3<f64>, hi: Vector3<f64> },
}

/// Static kd-tree over a point set, answering ball range queries.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<Vector3<f64>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl NeighborIndex {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build(&points, &mut order, 0, points.len(), &mut nodes);
        }
        NeighborIndex { points, order, nodes }
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of all points with `‖p - center‖ <= radius`, ascending.
    pub fn query_ball(&self, center: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if self.nodes.is_empty() || !(radius >= 0.0) {
            return out;
        }
        let r2 = radius * radius;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            match &self.nodes[n] {
                Node::Leaf { start, end } => {
                    for &p in &self.order[*start..*end] {
                        if (self.points[p] - center).norm_squared() <= r2 {
                            out.push(p);
                        }
                    }
                }
                Node::Split { axis, value, left, right, lo, hi } => {
                    if box_distance_sq(center, lo, hi) > r2 {
                        continue;
                    }
                    let d = center[*axis] - value;
                    if d - radius <= 0.0 {
                        stack.push(*left);
                    }
                    if d + radius >= 0.0 {
                        stack.push(*right);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

fn box_distance_sq(p: &Vector3<f64>, lo: &Vector3<f64>, hi: &Vector3<f64>) -> f64 {
    let mut d = 0.0;
    for a in 0..3 {
        let e = if p[a] < lo[a] {
            lo[a] - p[a]
        } else if p[a] > hi[a] {
            p[a] - hi[a]
        } else {
            0.0
        };
        d += e * e;
    }
    d
}

fn build(points: &[Vector3<f64>], order: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &p in &order[start..end] {
        lo = lo.inf(&points[p]);
        hi = hi.sup(&points[p]);
    }
    let axis = (hi - lo).imax();
    let mid = start + (end - start) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let value = points[order[mid]][axis];
    nodes.push(Node::Leaf { start, end });
    let left = build(points, order, start, mid, nodes);
    let right = build(points, order, mid, end, nodes);
    nodes[id] = Node::Split { axis, value, left, right, lo, hi };
    id
}
