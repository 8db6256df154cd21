#include "qbsde/condexp.hpp"

#include <algorithm>
#include <array>
#include <functional>
#include <cmath>
#include <sstream>

namespace qbsde {
namespace {

constexpr std::size_t kMinSamplesPerUnknown = 4;
constexpr int kRefinementSteps = 2;

void legendre_values(double u, std::size_t degree, std::span<double> out) {
    out[0] = 1.0;
    if (degree >= 1) out[1] = u;
    for (std::size_t m = 2; m <= degree; ++m) {
        const double dm = static_cast<double>(m);
        out[m] = ((2.0 * dm - 1.0) * u * out[m - 1] - (dm - 1.0) * out[m - 2]) / dm;
    }
}

void total_degree_indices(std::size_t axes, std::size_t degree, std::vector<std::vector<std::size_t>>& out) {
    // Graded order: all multi-indices of total degree 0, then 1, ...
    for (std::size_t total = 0; total <= degree; ++total) {
        std::vector<std::size_t> idx(axes, 0);
        std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t axis, std::size_t left) {
            if (axis + 1 == axes) {
                idx[axis] = left;
                out.push_back(idx);
                return;
            }
            for (std::size_t e = left + 1; e-- > 0;) {
                idx[axis] = e;
                rec(axis + 1, left - e);
            }
        };
        if (axes == 0) {
            if (total == 0) out.emplace_back();
        } else {
            rec(0, total);
        }
    }
}

bool all_finite(const double* data, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::isfinite(data[i])) return false;
    }
    return true;
}

}  // namespace

RegressionBasis RegressionBasis::polynomial(std::size_t degree, std::optional<Box> box) {
    RegressionBasis b;
    b.family = BasisFamily::polynomial;
    b.degree = degree;
    b.box = std::move(box);
    return b;
}

RegressionBasis RegressionBasis::local(std::size_t cells_per_axis, std::size_t degree, std::optional<Box> box) {
    if (degree > 1) throw std::invalid_argument("local basis supports degree 0 or 1");
    RegressionBasis b;
    b.family = BasisFamily::local;
    b.cells_per_axis = cells_per_axis;
    b.degree = degree;
    b.box = std::move(box);
    return b;
}

std::string RegressionBasis::describe() const {
    std::ostringstream out;
    if (family == BasisFamily::polynomial) {
        out << "polynomial(degree=" << degree << ")";
    } else {
        out << "local(cells=" << (cells_per_axis == 0 ? std::string("auto") : std::to_string(cells_per_axis))
            << ", degree=" << degree << ")";
    }
    return out.str();
}

void to_json(nlohmann::json& j, const RegressionBasis& basis) {
    j = nlohmann::json{{"family", basis.family == BasisFamily::polynomial ? "polynomial" : "local"},
                       {"degree", basis.degree},
                       {"cells_per_axis", basis.cells_per_axis}};
    if (basis.box) j["box"] = {{"lower", basis.box->lower}, {"upper", basis.box->upper}};
}

void from_json(const nlohmann::json& j, RegressionBasis& basis) {
    const std::string family = j.value("family", std::string("local"));
    if (family == "polynomial") {
        basis.family = BasisFamily::polynomial;
    } else if (family == "local") {
        basis.family = BasisFamily::local;
    } else {
        throw std::invalid_argument("unknown basis family '" + family + "'");
    }
    basis.degree = j.value("degree", std::size_t{basis.family == BasisFamily::polynomial ? 2u : 0u});
    basis.cells_per_axis = j.value("cells_per_axis", std::size_t{0});
    if (basis.family == BasisFamily::local && basis.degree > 1) {
        throw std::invalid_argument("local basis supports degree 0 or 1");
    }
    if (j.contains("box")) {
        basis.box = Box(j.at("box").at("lower").get<std::vector<double>>(),
                        j.at("box").at("upper").get<std::vector<double>>());
    }
}

// ---------------------------------------------------------------------------

ResolvedBasis ResolvedBasis::resolve(const RegressionBasis& spec, const SampleRef& samples) {
    const auto paths = static_cast<std::size_t>(samples.rows());
    const auto d = static_cast<std::size_t>(samples.cols());
    if (paths == 0 || d == 0) throw std::invalid_argument("regression: empty sample");
    ResolvedBasis r;
    r.family_ = spec.family;
    r.degree_ = spec.degree;
    if (spec.box) {
        if (spec.box->dim() != d) throw std::invalid_argument("regression: basis box has the wrong dimension");
        r.box_ = *spec.box;
    } else {
        std::vector<double> lo(d), hi(d);
        for (std::size_t i = 0; i < d; ++i) {
            lo[i] = samples.col(static_cast<Eigen::Index>(i)).minCoeff();
            hi[i] = samples.col(static_cast<Eigen::Index>(i)).maxCoeff();
        }
        r.box_ = Box(lo, hi);
    }
    r.active_.assign(d, false);
    std::size_t active_count = 0;
    for (std::size_t i = 0; i < d; ++i) {
        const double scale = 1.0 + std::max(std::abs(r.box_.lower[i]), std::abs(r.box_.upper[i]));
        r.active_[i] = r.box_.width(i) > 1e-12 * scale;
        active_count += r.active_[i] ? 1 : 0;
    }
    r.cells_.assign(d, 1);
    if (spec.family == BasisFamily::local) {
        std::size_t per_axis = spec.cells_per_axis;
        if (per_axis == 0 && active_count > 0) {
            const double raw = std::pow(static_cast<double>(paths), 1.0 / static_cast<double>(active_count + 2));
            per_axis = static_cast<std::size_t>(std::ceil(raw - 1e-9));
        }
        per_axis = std::max<std::size_t>(per_axis, 1);
        for (std::size_t i = 0; i < d; ++i) r.cells_[i] = r.active_[i] ? per_axis : 1;
    }
    r.finalize();
    return r;
}

void ResolvedBasis::finalize() {
    const std::size_t d = box_.dim();
    num_cells_ = 1;
    for (std::size_t i = 0; i < d; ++i) num_cells_ *= cells_[i];
    std::size_t active_count = 0;
    for (bool a : active_) active_count += a ? 1 : 0;
    exponents_.clear();
    if (family_ == BasisFamily::polynomial) {
        std::vector<std::vector<std::size_t>> reduced;
        total_degree_indices(active_count, degree_, reduced);
        for (const auto& idx : reduced) {
            std::vector<std::size_t> full(d, 0);
            std::size_t j = 0;
            for (std::size_t i = 0; i < d; ++i) {
                if (active_[i]) full[i] = idx[j++];
            }
            exponents_.push_back(std::move(full));
        }
        per_cell_ = exponents_.size();
    } else {
        per_cell_ = 1 + (degree_ == 1 ? active_count : 0);
    }
}

std::size_t ResolvedBasis::cell(std::span<const double> x) const {
    if (family_ == BasisFamily::polynomial) return 0;
    std::size_t flat = 0;
    std::size_t stride = 1;
    for (std::size_t i = 0; i < box_.dim(); ++i) {
        std::size_t idx = 0;
        if (cells_[i] > 1) {
            const double u = (x[i] - box_.lower[i]) / box_.width(i) * static_cast<double>(cells_[i]);
            const auto top = static_cast<double>(cells_[i] - 1);
            if (u > 0.0) idx = u >= top ? cells_[i] - 1 : static_cast<std::size_t>(u);
        }
        flat += idx * stride;
        stride *= cells_[i];
    }
    return flat;
}

void ResolvedBasis::features(std::span<const double> x, std::size_t cell, std::span<double> out) const {
    const std::size_t d = box_.dim();
    out[0] = 1.0;
    if (per_cell_ == 1) return;
    if (family_ == BasisFamily::polynomial) {
        // Legendre values per active axis, then products along each multi-index.
        std::array<double, 64> table{};
        std::vector<double> big;
        double* values = table.data();
        const std::size_t stride = degree_ + 1;
        if (d * stride > table.size()) {
            big.resize(d * stride);
            values = big.data();
        }
        for (std::size_t i = 0; i < d; ++i) {
            if (!active_[i]) continue;
            const double u = 2.0 * (x[i] - box_.lower[i]) / box_.width(i) - 1.0;
            legendre_values(u, degree_, std::span<double>(values + i * stride, stride));
        }
        for (std::size_t j = 0; j < exponents_.size(); ++j) {
            double v = 1.0;
            for (std::size_t i = 0; i < d; ++i) {
                if (exponents_[j][i] > 0) v *= values[i * stride + exponents_[j][i]];
            }
            out[j] = v;
        }
        return;
    }
    std::size_t rest = cell;
    std::size_t j = 1;
    for (std::size_t i = 0; i < d; ++i) {
        const std::size_t idx = rest % cells_[i];
        rest /= cells_[i];
        if (!active_[i]) continue;
        const double width = box_.width(i) / static_cast<double>(cells_[i]);
        const double lo = box_.lower[i] + width * static_cast<double>(idx);
        const double xi = std::clamp(x[i], lo, lo + width);
        out[j++] = (xi - (lo + 0.5 * width)) / (0.5 * width);
    }
}

nlohmann::json ResolvedBasis::to_json() const {
    std::vector<int> active(active_.begin(), active_.end());
    return {{"family", family_ == BasisFamily::polynomial ? "polynomial" : "local"},
            {"degree", degree_},
            {"lower", box_.lower},
            {"upper", box_.upper},
            {"active", active},
            {"cells", cells_}};
}

ResolvedBasis ResolvedBasis::from_json(const nlohmann::json& j) {
    ResolvedBasis r;
    r.family_ = j.at("family").get<std::string>() == "polynomial" ? BasisFamily::polynomial : BasisFamily::local;
    r.degree_ = j.at("degree").get<std::size_t>();
    r.box_ = Box(j.at("lower").get<std::vector<double>>(), j.at("upper").get<std::vector<double>>());
    const auto active = j.at("active").get<std::vector<int>>();
    r.active_.assign(active.begin(), active.end());
    r.cells_ = j.at("cells").get<std::vector<std::size_t>>();
    if (r.active_.size() != r.box_.dim() || r.cells_.size() != r.box_.dim()) {
        throw std::invalid_argument("regression basis JSON: inconsistent dimensions");
    }
    r.finalize();
    return r;
}

// ---------------------------------------------------------------------------

RegressionFit::RegressionFit(ResolvedBasis basis, Eigen::MatrixXd coefficients)
    : basis_(std::move(basis)), coefficients_(std::move(coefficients)) {
    if (static_cast<std::size_t>(coefficients_.rows()) != basis_.size()) {
        throw std::invalid_argument("RegressionFit: coefficient rows do not match the basis size");
    }
}

double RegressionFit::operator()(std::span<const double> x, std::size_t output) const {
    const std::size_t pc = basis_.functions_per_cell();
    std::array<double, 32> small{};
    std::vector<double> big;
    double* phi = small.data();
    if (pc > small.size()) {
        big.resize(pc);
        phi = big.data();
    }
    const std::size_t c = basis_.cell(x);
    basis_.features(x, c, std::span<double>(phi, pc));
    const auto col = static_cast<Eigen::Index>(output);
    double v = 0.0;
    for (std::size_t j = 0; j < pc; ++j) v += phi[j] * coefficients_(static_cast<Eigen::Index>(c * pc + j), col);
    return v;
}

void RegressionFit::evaluate(std::span<const double> x, std::span<double> out) const {
    const std::size_t pc = basis_.functions_per_cell();
    std::vector<double> phi(pc);
    const std::size_t c = basis_.cell(x);
    basis_.features(x, c, phi);
    for (std::size_t o = 0; o < out.size(); ++o) {
        double v = 0.0;
        for (std::size_t j = 0; j < pc; ++j) {
            v += phi[j] * coefficients_(static_cast<Eigen::Index>(c * pc + j), static_cast<Eigen::Index>(o));
        }
        out[o] = v;
    }
}

nlohmann::json RegressionFit::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < coefficients_.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(coefficients_.cols()));
        for (Eigen::Index c = 0; c < coefficients_.cols(); ++c) row[static_cast<std::size_t>(c)] = coefficients_(r, c);
        rows.push_back(row);
    }
    return {{"basis", basis_.to_json()}, {"coefficients", rows}};
}

RegressionFit RegressionFit::from_json(const nlohmann::json& j) {
    ResolvedBasis basis = ResolvedBasis::from_json(j.at("basis"));
    const auto& rows = j.at("coefficients");
    const auto nrows = static_cast<Eigen::Index>(rows.size());
    const auto ncols = nrows > 0 ? static_cast<Eigen::Index>(rows[0].size()) : 0;
    Eigen::MatrixXd coef(nrows, ncols);
    for (Eigen::Index r = 0; r < nrows; ++r) {
        const auto row = rows[static_cast<std::size_t>(r)].get<std::vector<double>>();
        if (static_cast<Eigen::Index>(row.size()) != ncols) throw std::invalid_argument("ragged coefficient matrix");
        for (Eigen::Index c = 0; c < ncols; ++c) coef(r, c) = row[static_cast<std::size_t>(c)];
    }
    return RegressionFit(std::move(basis), std::move(coef));
}

// ---------------------------------------------------------------------------

LeastSquaresProjector::LeastSquaresProjector(ResolvedBasis basis, const SampleRef& samples, const SampleMatrix* noise,
                                             std::optional<std::size_t> step)
    : basis_(std::move(basis)), step_(step) {
    const auto paths = static_cast<std::size_t>(samples.rows());
    if (static_cast<std::size_t>(samples.cols()) != basis_.dim()) {
        throw RegressionError("sample dimension does not match the basis", step_);
    }
    if (!all_finite(samples.data(), static_cast<std::size_t>(samples.size()))) {
        throw RegressionError("non-finite regressor values", step_);
    }
    if (noise != nullptr) {
        if (static_cast<std::size_t>(noise->rows()) != paths) throw RegressionError("noise sample size mismatch", step_);
        noise_dim_ = static_cast<std::size_t>(noise->cols());
        noise_ = *noise;
        if (!all_finite(noise_.data(), static_cast<std::size_t>(noise_.size()))) {
            throw RegressionError("non-finite noise values", step_);
        }
    }
    const std::size_t pc = basis_.functions_per_cell();
    const std::size_t blocks = 1 + noise_dim_;
    const std::size_t s = pc * blocks;
    if (basis_.family() == BasisFamily::polynomial && paths < 2 * s) {
        throw RegressionError("need at least " + std::to_string(2 * s) + " samples for " + std::to_string(s) +
                                  " basis functions, got " + std::to_string(paths),
                              step_);
    }
    cell_of_.resize(paths);
    features_.resize(static_cast<Eigen::Index>(paths), static_cast<Eigen::Index>(pc));
    std::vector<Eigen::MatrixXd> gram(basis_.num_cells());
    cells_.assign(basis_.num_cells(), CellSystem{});
    Eigen::VectorXd psi(static_cast<Eigen::Index>(s));
    for (std::size_t i = 0; i < paths; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const std::span<const double> x(samples.row(ii).data(), basis_.dim());
        const std::size_t c = basis_.cell(x);
        cell_of_[i] = c;
        basis_.features(x, c, std::span<double>(features_.row(ii).data(), pc));
        for (std::size_t j = 0; j < pc; ++j) psi(static_cast<Eigen::Index>(j)) = features_(ii, static_cast<Eigen::Index>(j));
        for (std::size_t l = 0; l < noise_dim_; ++l) {
            const double xi = noise_(ii, static_cast<Eigen::Index>(l));
            for (std::size_t j = 0; j < pc; ++j) {
                psi(static_cast<Eigen::Index>((l + 1) * pc + j)) = features_(ii, static_cast<Eigen::Index>(j)) * xi;
            }
        }
        if (gram[c].size() == 0) gram[c] = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s));
        gram[c].selfadjointView<Eigen::Lower>().rankUpdate(psi);
        ++cells_[c].count;
    }
    if (!all_finite(features_.data(), static_cast<std::size_t>(features_.size()))) {
        throw RegressionError("non-finite basis values", step_);
    }
    for (std::size_t c = 0; c < cells_.size(); ++c) {
        auto& cell = cells_[c];
        const std::size_t min_count = basis_.family() == BasisFamily::local ? kMinSamplesPerUnknown * s : s;
        if (cell.count < min_count) continue;
        cell.gram = gram[c].selfadjointView<Eigen::Lower>();
        Eigen::MatrixXd a = cell.gram;
        const double ridge = 1e-10 * a.trace();
        a.diagonal().array() += ridge;
        cell.ldlt.compute(a);
        if (cell.ldlt.info() != Eigen::Success || !(cell.ldlt.vectorD().minCoeff() > 0.0)) {
            throw RegressionError("singular normal equations in cell " + std::to_string(c), step_);
        }
        cell.solvable = true;
    }
}

Eigen::MatrixXd LeastSquaresProjector::project(const Eigen::MatrixXd& targets) const {
    const std::size_t paths = num_samples();
    if (static_cast<std::size_t>(targets.rows()) != paths) throw RegressionError("target sample size mismatch", step_);
    if (!all_finite(targets.data(), static_cast<std::size_t>(targets.size()))) {
        throw RegressionError("non-finite target values", step_);
    }
    const auto m = targets.cols();
    const std::size_t pc = basis_.functions_per_cell();
    const std::size_t blocks = 1 + noise_dim_;
    const auto s = static_cast<Eigen::Index>(pc * blocks);
    std::vector<Eigen::MatrixXd> rhs(cells_.size());
    std::vector<Eigen::VectorXd> sums(cells_.size());
    // Every cell's first local function is the constant 1, so the mean can be
    // taken out of the targets and restored on that coefficient.
    const Eigen::VectorXd global_mean = targets.colwise().mean().transpose();
    const Eigen::MatrixXd centred = targets.rowwise() - global_mean.transpose();
    Eigen::VectorXd psi(s);
    for (std::size_t i = 0; i < paths; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const std::size_t c = cell_of_[i];
        if (cells_[c].solvable) {
            for (std::size_t j = 0; j < pc; ++j) psi(static_cast<Eigen::Index>(j)) = features_(ii, static_cast<Eigen::Index>(j));
            for (std::size_t l = 0; l < noise_dim_; ++l) {
                const double xi = noise_(ii, static_cast<Eigen::Index>(l));
                for (std::size_t j = 0; j < pc; ++j) {
                    psi(static_cast<Eigen::Index>((l + 1) * pc + j)) = features_(ii, static_cast<Eigen::Index>(j)) * xi;
                }
            }
            if (rhs[c].size() == 0) rhs[c] = Eigen::MatrixXd::Zero(s, m);
            rhs[c].noalias() += psi * centred.row(ii);
        } else {
            if (sums[c].size() == 0) sums[c] = Eigen::VectorXd::Zero(m);
            sums[c] += centred.row(ii).transpose();
        }
    }
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(basis_.size()),
                                                m * static_cast<Eigen::Index>(blocks));
    for (std::size_t c = 0; c < cells_.size(); ++c) {
        const auto row0 = static_cast<Eigen::Index>(c * pc);
        if (cells_[c].solvable) {
            Eigen::MatrixXd sol = cells_[c].ldlt.solve(rhs[c]);
            // Iterative refinement against the unregularized system.
            for (int sweep = 0; sweep < kRefinementSteps; ++sweep) {
                sol += cells_[c].ldlt.solve(rhs[c] - cells_[c].gram * sol);
            }
            if (!sol.allFinite()) throw RegressionError("non-finite coefficients in cell " + std::to_string(c), step_);
            for (Eigen::Index t = 0; t < m; ++t) {
                for (std::size_t b = 0; b < blocks; ++b) {
                    out.block(row0, t * static_cast<Eigen::Index>(blocks) + static_cast<Eigen::Index>(b),
                              static_cast<Eigen::Index>(pc), 1) =
                        sol.block(static_cast<Eigen::Index>(b * pc), t, static_cast<Eigen::Index>(pc), 1);
                }
                out(row0, t * static_cast<Eigen::Index>(blocks)) += global_mean(t);
            }
        } else {
            for (Eigen::Index t = 0; t < m; ++t) {
                const double value = cells_[c].count > 0
                                         ? global_mean(t) + sums[c](t) / static_cast<double>(cells_[c].count)
                                         : global_mean(t);
                out(row0, t * static_cast<Eigen::Index>(blocks)) = value;
            }
        }
    }
    return out;
}

RegressionFit LeastSquaresProjector::fit(const Eigen::MatrixXd& targets) const {
    return RegressionFit(basis_, project(targets));
}

double LeastSquaresProjector::fitted_value(const Eigen::MatrixXd& coefficients, std::size_t column,
                                           std::size_t i) const {
    const std::size_t pc = basis_.functions_per_cell();
    const std::size_t c = cell_of_[i];
    const auto ii = static_cast<Eigen::Index>(i);
    const auto col = static_cast<Eigen::Index>(column);
    double v = 0.0;
    for (std::size_t j = 0; j < pc; ++j) {
        v += features_(ii, static_cast<Eigen::Index>(j)) * coefficients(static_cast<Eigen::Index>(c * pc + j), col);
    }
    return v;
}

RegressionFit fit_conditional_expectation(const SampleRef& x_samples, const Eigen::VectorXd& v_samples,
                                          const RegressionBasis& basis, std::optional<std::size_t> step) {
    if (v_samples.size() != x_samples.rows()) throw RegressionError("sample sizes differ", step);
    ResolvedBasis resolved = ResolvedBasis::resolve(basis, x_samples);
    LeastSquaresProjector projector(std::move(resolved), x_samples, nullptr, step);
    return projector.fit(v_samples);
}

// ---------------------------------------------------------------------------

QuadratureChain::QuadratureChain(SdeModel model, TimeGrid grid, Box space_box, std::size_t nodes_per_axis,
                                 std::size_t gh_order)
    : model_(std::move(model)),
      grid_(std::move(grid)),
      box_(std::move(space_box)),
      per_axis_(nodes_per_axis),
      gh_(gauss_hermite(gh_order)) {
    if (box_.dim() == 0 || box_.dim() > 2) throw std::invalid_argument("quadrature chain: dimension must be 1 or 2");
    if (box_.empty()) throw std::invalid_argument("quadrature chain: empty box");
    if (per_axis_ < 2) throw std::invalid_argument("quadrature chain: need at least 2 nodes per axis");
    num_nodes_ = box_.dim() == 1 ? per_axis_ : per_axis_ * per_axis_;
}

std::vector<double> QuadratureChain::node(std::size_t index) const {
    std::vector<double> x(box_.dim());
    std::size_t rest = index;
    for (std::size_t i = 0; i < box_.dim(); ++i) {
        const std::size_t j = rest % per_axis_;
        rest /= per_axis_;
        x[i] = box_.lower[i] + box_.width(i) * static_cast<double>(j) / static_cast<double>(per_axis_ - 1);
    }
    return x;
}

std::vector<TransitionNode> QuadratureChain::transition(std::size_t k, std::span<const double> x) const {
    const std::size_t d = box_.dim();
    const double t = grid_.time(k);
    const double h = grid_.step(k);
    const double sqrt_h = std::sqrt(h);
    std::vector<double> mean(d);
    model_.drift(t, x, mean);
    for (std::size_t i = 0; i < d; ++i) mean[i] = x[i] + h * mean[i];
    const Eigen::MatrixXd sigma = model_.diffusion(t);
    const std::size_t m = gh_.size();
    const std::size_t count = d == 1 ? m : m * m;
    std::vector<TransitionNode> out(count);
    for (std::size_t q = 0; q < count; ++q) {
        auto& node = out[q];
        node.xi.resize(d);
        node.point.resize(d);
        if (d == 1) {
            node.xi[0] = gh_.nodes[q];
            node.weight = gh_.weights[q];
        } else {
            node.xi[0] = gh_.nodes[q % m];
            node.xi[1] = gh_.nodes[q / m];
            node.weight = gh_.weights[q % m] * gh_.weights[q / m];
        }
        for (std::size_t i = 0; i < d; ++i) {
            double noise = 0.0;
            for (std::size_t l = 0; l < d; ++l) {
                noise += sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) * node.xi[l];
            }
            node.point[i] = mean[i] + sqrt_h * noise;
        }
    }
    return out;
}

double QuadratureChain::interpolate(std::span<const double> values, std::span<const double> x) const {
    const std::size_t d = box_.dim();
    std::array<std::size_t, 2> lo{};
    std::array<double, 2> frac{};
    for (std::size_t i = 0; i < d; ++i) {
        double u = (x[i] - box_.lower[i]) / box_.width(i) * static_cast<double>(per_axis_ - 1);
        u = std::clamp(u, 0.0, static_cast<double>(per_axis_ - 1));
        auto j = static_cast<std::size_t>(u);
        if (j >= per_axis_ - 1) j = per_axis_ - 2;
        lo[i] = j;
        frac[i] = u - static_cast<double>(j);
    }
    if (d == 1) return (1.0 - frac[0]) * values[lo[0]] + frac[0] * values[lo[0] + 1];
    const std::size_t base = lo[0] + per_axis_ * lo[1];
    const double v00 = values[base];
    const double v10 = values[base + 1];
    const double v01 = values[base + per_axis_];
    const double v11 = values[base + per_axis_ + 1];
    return (1.0 - frac[1]) * ((1.0 - frac[0]) * v00 + frac[0] * v10) + frac[1] * ((1.0 - frac[0]) * v01 + frac[0] * v11);
}

double QuadratureChain::expectation(std::size_t k, std::span<const double> x,
                                    std::span<const double> next_values) const {
    double sum = 0.0;
    for (const auto& node : transition(k, x)) sum += node.weight * interpolate(next_values, node.point);
    return sum;
}

QuadratureChain build_quadrature_chain(const SdeModel& model, const TimeGrid& grid, const Box& space_box,
                                       std::size_t nodes_per_axis, std::size_t gh_order) {
    model.validate();
    const std::size_t d = model.dim;
    if (d > 2) throw std::invalid_argument("quadrature chain: dimension " + std::to_string(d) + " exceeds 2");
    if (space_box.dim() != d) throw std::invalid_argument("quadrature chain: box dimension mismatch");
    std::vector<double> mean = model.x0;
    std::vector<double> lo = mean, hi = mean, var(d, 0.0), drift(d);
    for (std::size_t k = 0; k < grid.num_steps(); ++k) {
        const double t = grid.time(k);
        const double h = grid.step(k);
        model.drift(t, mean, drift);
        const Eigen::MatrixXd sigma = model.diffusion(t);
        const Eigen::MatrixXd cov = sigma * sigma.transpose();
        for (std::size_t i = 0; i < d; ++i) {
            mean[i] += h * drift[i];
            var[i] += h * cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
            lo[i] = std::min(lo[i], mean[i]);
            hi[i] = std::max(hi[i], mean[i]);
        }
    }
    for (std::size_t i = 0; i < d; ++i) {
        const double reach = 6.0 * std::sqrt(var[i]);
        if (space_box.lower[i] > lo[i] - reach || space_box.upper[i] < hi[i] + reach) {
            std::ostringstream msg;
            msg << "quadrature chain: box [" << space_box.lower[i] << ", " << space_box.upper[i] << "] on axis " << i
                << " does not cover [" << lo[i] - reach << ", " << hi[i] + reach << "] (six standard deviations)";
            throw std::invalid_argument(msg.str());
        }
    }
    return QuadratureChain(model, grid, space_box, nodes_per_axis, gh_order);
}

}  // namespace qbsde
