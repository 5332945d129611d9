/// `c·|a|·|1{b≥0} - 1{a≥0}| <= c·|b-a|·1{|b-a|≥θ} + c·θ·1{|a|<θ}`.
///
/// Bounds the error of replacing the sign of `a` by the sign of an
/// approximation `b`; always true for `c >= 0`, `θ > 0`.
pub fn indicator_gap_bound_check(a: f64, b: f64, c: f64, theta: f64) -> bool {
    let ind = |v: bool| if v { 1.0f64 } else { 0.0 };
    let lhs = c * a.abs() * (ind(b >= 0.0) - ind(a >= 0.0)).abs();
    let gap = (b - a).abs();
    let rhs = c * gap * ind(gap >= theta) + c * theta * ind(a.abs() < theta);
    lhs <= rhs
}
