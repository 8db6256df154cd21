#include "qbsde/quadrature.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>
#include <stdexcept>

namespace qbsde {
namespace {

// Golub-Welsch on a symmetric tridiagonal Jacobi matrix with zero diagonal.
QuadratureRule golub_welsch(std::size_t order, const std::function<double(std::size_t)>& off_diagonal,
                            double total_mass) {
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(order),
                                                   static_cast<Eigen::Index>(order));
    for (std::size_t k = 1; k < order; ++k) {
        const double b = off_diagonal(k);
        jacobi(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k - 1)) = b;
        jacobi(static_cast<Eigen::Index>(k - 1), static_cast<Eigen::Index>(k)) = b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
    QuadratureRule rule;
    rule.nodes.resize(order);
    rule.weights.resize(order);
    for (std::size_t j = 0; j < order; ++j) {
        const auto col = static_cast<Eigen::Index>(j);
        rule.nodes[j] = solver.eigenvalues()(col);
        const double v0 = solver.eigenvectors()(0, col);
        rule.weights[j] = total_mass * v0 * v0;
    }
    // Symmetrize: the exact rules are symmetric about zero.
    for (std::size_t j = 0; j < order / 2; ++j) {
        const std::size_t k = order - 1 - j;
        const double x = 0.5 * (rule.nodes[k] - rule.nodes[j]);
        const double w = 0.5 * (rule.weights[k] + rule.weights[j]);
        rule.nodes[j] = -x;
        rule.nodes[k] = x;
        rule.weights[j] = w;
        rule.weights[k] = w;
    }
    if (order % 2 == 1) rule.nodes[order / 2] = 0.0;
    return rule;
}

// Kronrod 15-point nodes (positive half) and weights, with embedded Gauss 7.
constexpr double kXgk[8] = {0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
                            0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
                            0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
                            0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr double kWgk[8] = {0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
                            0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
                            0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
                            0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr double kWg[4] = {0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
                           0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Segment {
    double a, b, value, error;
    bool operator<(const Segment& other) const { return error < other.error; }
};

Segment kronrod(const std::function<double(double)>& f, double a, double b) {
    const double center = 0.5 * (a + b);
    const double half = 0.5 * (b - a);
    const double fc = f(center);
    double result_k = fc * kWgk[7];
    double result_g = fc * kWg[3];
    for (int j = 0; j < 7; ++j) {
        const double dx = half * kXgk[j];
        const double f1 = f(center - dx);
        const double f2 = f(center + dx);
        result_k += kWgk[j] * (f1 + f2);
        if (j % 2 == 1) result_g += kWg[j / 2] * (f1 + f2);
    }
    return {a, b, result_k * half, std::abs((result_k - result_g) * half)};
}

}  // namespace

QuadratureRule gauss_hermite(std::size_t order) {
    if (order == 0) throw std::invalid_argument("gauss_hermite: order must be positive");
    // Probabilists' Hermite recurrence: x He_k = He_{k+1} + k He_{k-1}.
    return golub_welsch(order, [](std::size_t k) { return std::sqrt(static_cast<double>(k)); }, 1.0);
}

QuadratureRule gauss_legendre(std::size_t order) {
    if (order == 0) throw std::invalid_argument("gauss_legendre: order must be positive");
    return golub_welsch(
        order,
        [](std::size_t k) {
            const double kk = static_cast<double>(k);
            return kk / std::sqrt(4.0 * kk * kk - 1.0);
        },
        2.0);
}

const QuadratureRule& unit_gauss_legendre3() {
    static const QuadratureRule rule = [] {
        const double r = std::sqrt(0.6);
        return QuadratureRule{{0.5 * (1.0 - r), 0.5, 0.5 * (1.0 + r)}, {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0}};
    }();
    return rule;
}

void append_graded_nodes(double a, double b, std::span<const double> breakpoints, const GradedOptions& options,
                         std::vector<double>& nodes, std::vector<double>& weights) {
    if (!(b > a)) return;
    thread_local std::size_t cached_order = 0;
    thread_local QuadratureRule base;
    if (cached_order != options.order) {
        base = gauss_legendre(options.order);
        cached_order = options.order;
    }

    auto panel = [&](double lo, double hi) {
        const double half = 0.5 * (hi - lo);
        const double mid = 0.5 * (hi + lo);
        for (std::size_t j = 0; j < base.size(); ++j) {
            nodes.push_back(mid + half * base.nodes[j]);
            weights.push_back(half * base.weights[j]);
        }
    };
    auto uniform = [&](double lo, double hi) {
        const auto count = static_cast<std::size_t>(std::max(1.0, std::ceil((hi - lo) / options.max_panel)));
        const double width = (hi - lo) / static_cast<double>(count);
        for (std::size_t i = 0; i < count; ++i) {
            panel(lo + width * static_cast<double>(i), i + 1 == count ? hi : lo + width * static_cast<double>(i + 1));
        }
    };
    // Graded panels on [c, c + length * direction]; the singular end is c.
    auto graded = [&](double c, double length, double direction) {
        double outer = length;
        for (std::size_t level = 0; level < options.levels; ++level) {
            const double inner = outer * options.ratio;
            double lo = c + direction * inner;
            double hi = c + direction * outer;
            if (lo > hi) std::swap(lo, hi);
            uniform(lo, hi);
            outer = inner;
        }
        double lo = c;
        double hi = c + direction * outer;
        if (lo > hi) std::swap(lo, hi);
        panel(lo, hi);
    };

    std::vector<double> cuts;
    for (double p : breakpoints) {
        if (p > a && p < b) cuts.push_back(p);
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    std::vector<double> ends;
    ends.push_back(a);
    ends.insert(ends.end(), cuts.begin(), cuts.end());
    ends.push_back(b);
    for (std::size_t s = 0; s + 1 < ends.size(); ++s) {
        const double lo = ends[s];
        const double hi = ends[s + 1];
        const bool left_singular = s > 0;
        const bool right_singular = s + 2 < ends.size();
        if (left_singular && right_singular) {
            const double mid = 0.5 * (lo + hi);
            graded(lo, mid - lo, 1.0);
            graded(hi, hi - mid, -1.0);
        } else if (left_singular) {
            graded(lo, hi - lo, 1.0);
        } else if (right_singular) {
            graded(hi, hi - lo, -1.0);
        } else {
            uniform(lo, hi);
        }
    }
}

double integrate_adaptive(const std::function<double(double)>& f, double a, double b, double abs_tol, double rel_tol,
                          std::size_t max_intervals) {
    if (a == b) return 0.0;
    double sign = 1.0;
    if (b < a) {
        std::swap(a, b);
        sign = -1.0;
    }
    std::priority_queue<Segment> queue;
    Segment first = kronrod(f, a, b);
    double total = first.value;
    double error = first.error;
    queue.push(first);
    while (error > std::max(abs_tol, rel_tol * std::abs(total)) && queue.size() < max_intervals) {
        const Segment worst = queue.top();
        queue.pop();
        const double mid = 0.5 * (worst.a + worst.b);
        if (!(mid > worst.a && mid < worst.b)) {
            queue.push(worst);
            break;
        }
        const Segment left = kronrod(f, worst.a, mid);
        const Segment right = kronrod(f, mid, worst.b);
        total += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        queue.push(left);
        queue.push(right);
    }
    // Re-sum to avoid drift from the incremental updates.
    double sum = 0.0;
    while (!queue.empty()) {
        sum += queue.top().value;
        queue.pop();
    }
    return sign * sum;
}

}  // namespace qbsde
