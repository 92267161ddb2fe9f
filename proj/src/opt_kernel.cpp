#include "freqopf/opt_kernel.hpp"

#include "freqopf/error.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <memory>
#include <queue>
#include <sstream>

namespace freqopf {

// ---------------------------------------------------------------------------
// PWL costs

std::vector<double> PwlCost::slopes() const
{
    std::vector<double> s;
    for (std::size_t k = 1; k < breakpoints.size(); ++k)
        s.push_back((breakpoints[k].second - breakpoints[k - 1].second) /
                    (breakpoints[k].first - breakpoints[k - 1].first));
    return s;
}

double PwlCost::eval(double p) const
{
    if (breakpoints.empty())
        return 0.0;
    if (breakpoints.size() == 1)
        return breakpoints.front().second;
    std::size_t k = 1;
    while (k + 1 < breakpoints.size() && p > breakpoints[k].first)
        ++k;
    const auto& [p0, c0] = breakpoints[k - 1];
    const auto& [p1, c1] = breakpoints[k];
    return c0 + (c1 - c0) * (p - p0) / (p1 - p0);
}

PwlCost pwl_quadratic(double a, double b, double c, double p_min, double p_max, int n_seg)
{
    if (a < 0.0)
        throw Error(Errc::NonConvexCost, "quadratic coefficient is negative");
    if (!(p_min < p_max) || n_seg < 1)
        throw Error(Errc::InvalidModel, "need p_min < p_max and n_seg >= 1");
    PwlCost pc;
    for (int k = 0; k <= n_seg; ++k) {
        double p = k == n_seg ? p_max : p_min + (p_max - p_min) * k / n_seg;
        pc.breakpoints.emplace_back(p, a * p * p + b * p + c);
    }
    return pc;
}

double pwl_error_bound(double a, double p_min, double p_max, int n_seg)
{
    double d = (p_max - p_min) / n_seg;
    return a * d * d / 4.0;
}

// ---------------------------------------------------------------------------
// Model

int OptModel::add_var(std::string name, double lo, double hi, bool binary)
{
    if (binary) {
        lo = std::max(lo, 0.0);
        hi = std::min(hi, 1.0);
    }
    vars_.push_back({std::move(name), lo, hi, binary});
    obj_.push_back(0.0);
    return static_cast<int>(vars_.size()) - 1;
}

int OptModel::add_constraint(std::string name, std::vector<LinTerm> terms, Sense sense, double rhs)
{
    cons_.push_back({std::move(name), std::move(terms), sense, rhs});
    return static_cast<int>(cons_.size()) - 1;
}

void OptModel::add_objective(int var, double coef)
{
    if (var < 0 || var >= num_vars())
        throw Error(Errc::InvalidModel, "objective references undeclared variable");
    obj_[static_cast<std::size_t>(var)] += coef;
}

void OptModel::add_pwl_objective(int var, PwlCost cost)
{
    pwl_.push_back({var, std::move(cost)});
}

void OptModel::set_bounds(int var, double lo, double hi)
{
    auto& v = vars_.at(static_cast<std::size_t>(var));
    v.lo = lo;
    v.hi = hi;
}

void OptModel::replace_constraint(int row, std::vector<LinTerm> terms, Sense sense, double rhs)
{
    auto& c = cons_.at(static_cast<std::size_t>(row));
    c.terms = std::move(terms);
    c.sense = sense;
    c.rhs = rhs;
}

void OptModel::clear_objective()
{
    std::fill(obj_.begin(), obj_.end(), 0.0);
    obj_const_ = 0.0;
    pwl_.clear();
}

int OptModel::num_binaries() const
{
    return static_cast<int>(std::count_if(vars_.begin(), vars_.end(), [](const Variable& v) { return v.binary; }));
}

double OptModel::evaluate_objective(const std::vector<double>& x) const
{
    double f = obj_const_;
    for (std::size_t j = 0; j < vars_.size(); ++j)
        f += obj_[j] * x[j];
    for (const auto& t : pwl_)
        f += t.cost.eval(x[static_cast<std::size_t>(t.var)]);
    return f;
}

double OptModel::max_violation(const std::vector<double>& x) const
{
    double worst = 0.0;
    for (const auto& c : cons_) {
        double lhs = 0.0;
        for (const auto& t : c.terms)
            lhs += t.coef * x[static_cast<std::size_t>(t.var)];
        double v = 0.0;
        if (c.sense != Sense::Ge)
            v = std::max(v, lhs - c.rhs);
        if (c.sense != Sense::Le)
            v = std::max(v, c.rhs - lhs);
        worst = std::max(worst, v);
    }
    return worst;
}

void OptModel::validate() const
{
    auto bad = [](const std::string& what) { throw Error(Errc::InvalidModel, what); };
    for (const auto& v : vars_) {
        if (std::isnan(v.lo) || std::isnan(v.hi) || v.lo > v.hi)
            bad("variable " + v.name + " has inconsistent bounds");
        if (v.lo == kInf || v.hi == -kInf)
            bad("variable " + v.name + " has an empty domain");
    }
    for (double c : obj_)
        if (!std::isfinite(c))
            bad("non-finite objective coefficient");
    for (const auto& c : cons_) {
        if (!std::isfinite(c.rhs))
            bad("constraint " + c.name + " has a non-finite rhs");
        for (const auto& t : c.terms) {
            if (t.var < 0 || t.var >= num_vars())
                bad("constraint " + c.name + " references an undeclared variable");
            if (!std::isfinite(t.coef))
                bad("constraint " + c.name + " has a non-finite coefficient");
        }
    }
    for (const auto& t : pwl_) {
        if (t.var < 0 || t.var >= num_vars())
            bad("PWL term references an undeclared variable");
        const auto& bp = t.cost.breakpoints;
        if (bp.size() < 2)
            bad("PWL term needs at least two breakpoints");
        for (std::size_t k = 1; k < bp.size(); ++k)
            if (!(bp[k].first > bp[k - 1].first))
                bad("PWL breakpoints must be strictly increasing");
        auto s = t.cost.slopes();
        for (std::size_t k = 1; k < s.size(); ++k)
            if (s[k] < s[k - 1] - 1e-12 * (1.0 + std::abs(s[k - 1])))
                throw Error(Errc::NonConvexCost, "PWL term on " + vars_[static_cast<std::size_t>(t.var)].name +
                                                     " is not convex");
    }
}

OptModel OptModel::lowered() const
{
    validate();
    OptModel out;
    out.vars_ = vars_;
    out.cons_ = cons_;
    out.obj_ = obj_;
    out.obj_const_ = obj_const_;
    for (std::size_t k = 0; k < pwl_.size(); ++k) {
        const auto& t = pwl_[k];
        const auto& bp = t.cost.breakpoints;
        auto& v = out.vars_[static_cast<std::size_t>(t.var)];
        v.lo = std::max(v.lo, bp.front().first);
        v.hi = std::min(v.hi, bp.back().first);
        const std::string base = v.name;
        auto s = t.cost.slopes();
        std::vector<LinTerm> link{{t.var, 1.0}};
        for (std::size_t seg = 0; seg < s.size(); ++seg) {
            int sv = out.add_var(base + "_seg" + std::to_string(seg), 0.0, bp[seg + 1].first - bp[seg].first);
            out.obj_[static_cast<std::size_t>(sv)] = s[seg];
            link.push_back({sv, -1.0});
        }
        out.obj_const_ += bp.front().second;
        out.add_constraint("pwl_link_" + std::to_string(k), std::move(link), Sense::Eq, bp.front().first);
    }
    return out;
}

std::string OptModel::to_lp_text() const
{
    OptModel m = lowered();
    std::ostringstream os;
    os.precision(17);
    auto name = [&](int j) {
        std::string s = m.vars_[static_cast<std::size_t>(j)].name;
        if (s.empty())
            s = "x" + std::to_string(j);
        std::replace_if(s.begin(), s.end(), [](char ch) { return ch == ' ' || ch == ':' || ch == '-'; }, '_');
        return s;
    };
    auto expr = [&](const std::vector<std::pair<int, double>>& terms) {
        std::ostringstream e;
        e.precision(17);
        bool first = true;
        for (const auto& [j, c] : terms) {
            if (c == 0.0)
                continue;
            e << (c < 0 ? (first ? "-" : " - ") : (first ? "" : " + ")) << std::abs(c) << " " << name(j);
            first = false;
        }
        if (first)
            e << "0 " << name(0);
        return e.str();
    };
    os << "\\ objective constant " << m.obj_const_ << "\nMinimize\n obj: ";
    std::vector<std::pair<int, double>> ot;
    for (int j = 0; j < m.num_vars(); ++j)
        ot.emplace_back(j, m.obj_[static_cast<std::size_t>(j)]);
    os << expr(ot) << "\nSubject To\n";
    for (std::size_t i = 0; i < m.cons_.size(); ++i) {
        const auto& c = m.cons_[i];
        std::vector<std::pair<int, double>> t;
        for (const auto& lt : c.terms)
            t.emplace_back(lt.var, lt.coef);
        const char* op = c.sense == Sense::Le ? "<=" : c.sense == Sense::Ge ? ">=" : "=";
        os << " c" << i << ": " << expr(t) << " " << op << " " << c.rhs << "\n";
    }
    os << "Bounds\n";
    for (int j = 0; j < m.num_vars(); ++j) {
        const auto& v = m.vars_[static_cast<std::size_t>(j)];
        if (v.lo == -kInf && v.hi == kInf)
            os << " " << name(j) << " free\n";
        else if (v.lo == -kInf)
            os << " -inf <= " << name(j) << " <= " << v.hi << "\n";
        else if (v.hi == kInf)
            os << " " << name(j) << " >= " << v.lo << "\n";
        else
            os << " " << v.lo << " <= " << name(j) << " <= " << v.hi << "\n";
    }
    if (m.num_binaries() > 0) {
        os << "Binaries\n";
        for (int j = 0; j < m.num_vars(); ++j)
            if (m.vars_[static_cast<std::size_t>(j)].binary)
                os << " " << name(j) << "\n";
    }
    os << "End\n";
    return os.str();
}

const char* status_name(SolveStatus s)
{
    switch (s) {
    case SolveStatus::Optimal: return "Optimal";
    case SolveStatus::Infeasible: return "Infeasible";
    case SolveStatus::Unbounded: return "Unbounded";
    case SolveStatus::TimeLimit: return "TimeLimit";
    case SolveStatus::IterationLimit: return "IterationLimit";
    }
    return "Unknown";
}

// ---------------------------------------------------------------------------
// Bounded dual simplex on [A | -I] (x, r) = 0.

namespace {

using Clock = std::chrono::steady_clock;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kBig = 1e7;      // artificial bound for columns the dual start cannot price
constexpr double kPivTol = 1e-9;

enum class VarStat : std::uint8_t { Basic, AtLo, AtHi, Free };

enum class LpOutcome { Optimal, Infeasible, Unbounded, TimeLimit, IterationLimit, Cutoff };

struct Basis {
    std::vector<int> head;
    std::vector<VarStat> stat;
};

struct SparseCol {
    std::vector<int> row;
    std::vector<double> val;
};

// Sparse LU of the basis plus a product-form eta file.
class BasisFactor {
public:
    bool factor(const std::vector<SparseCol>& cols, const std::vector<int>& head, int m)
    {
        m_ = m;
        etas_.clear();
        valid_ = false;
        if (m == 0)
            return valid_ = true;
        std::vector<Eigen::Triplet<double>> trip;
        for (int i = 0; i < m; ++i) {
            const auto& c = cols[static_cast<std::size_t>(head[static_cast<std::size_t>(i)])];
            for (std::size_t k = 0; k < c.row.size(); ++k)
                trip.emplace_back(c.row[k], i, c.val[k]);
        }
        Eigen::SparseMatrix<double> B(m, m);
        B.setFromTriplets(trip.begin(), trip.end());
        B.makeCompressed();
        lu_.compute(B);
        if (lu_.info() != Eigen::Success)
            return false;
        // Reject near-singular bases by a residual probe.
        VectorXd v(m);
        for (int i = 0; i < m; ++i)
            v[i] = 1.0 + static_cast<double>(i % 7) / 7.0;
        VectorXd bv = B * v;
        valid_ = true;
        ftran(bv);
        valid_ = (bv - v).cwiseAbs().maxCoeff() <= 1e-7;
        return valid_;
    }

    bool valid() const { return valid_; }
    void invalidate() { valid_ = false; }
    std::size_t eta_count() const { return etas_.size(); }

    /// v := B^{-1} v
    void ftran(VectorXd& v) const
    {
        if (m_ == 0)
            return;
        v = lu_.solve(v).eval();
        for (const auto& e : etas_) {
            double xr = v[e.r] / e.piv;
            if (xr != 0.0)
                for (std::size_t k = 0; k < e.idx.size(); ++k)
                    v[e.idx[k]] -= e.val[k] * xr;
            v[e.r] = xr;
        }
    }

    /// v := B^{-T} v
    void btran(VectorXd& v) const
    {
        if (m_ == 0)
            return;
        for (auto it = etas_.rbegin(); it != etas_.rend(); ++it) {
            double s = v[it->r];
            for (std::size_t k = 0; k < it->idx.size(); ++k)
                s -= it->val[k] * v[it->idx[k]];
            v[it->r] = s / it->piv;
        }
        v = const_cast<LuType&>(lu_).transpose().solve(v).eval();
    }

    /// Column r of the basis replaced; u = B^{-1} a_q before the change.
    void update(int r, const VectorXd& u)
    {
        Eta e;
        e.r = r;
        e.piv = u[r];
        for (int i = 0; i < m_; ++i)
            if (i != r && u[i] != 0.0) {
                e.idx.push_back(i);
                e.val.push_back(u[i]);
            }
        etas_.push_back(std::move(e));
    }

private:
    struct Eta {
        int r = 0;
        double piv = 1.0;
        std::vector<int> idx;
        std::vector<double> val;
    };
    int m_ = 0;
    bool valid_ = false;
    using LuType = Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>>;
    LuType lu_;
    std::vector<Eta> etas_;
};

class DualSimplex {
public:
    DualSimplex(const OptModel& m, const LpOptions& opt)
        : opt_(opt)
    {
        n_ = m.num_vars();
        m_ = m.num_constraints();
        N_ = n_ + m_;
        cols_.resize(static_cast<std::size_t>(N_));
        for (int i = 0; i < m_; ++i) {
            for (const auto& t : m.constraints()[static_cast<std::size_t>(i)].terms) {
                auto& c = cols_[static_cast<std::size_t>(t.var)];
                if (!c.row.empty() && c.row.back() == i)
                    c.val.back() += t.coef;
                else {
                    c.row.push_back(i);
                    c.val.push_back(t.coef);
                }
            }
            cols_[static_cast<std::size_t>(n_ + i)].row.push_back(i);
            cols_[static_cast<std::size_t>(n_ + i)].val.push_back(-1.0);
        }
        cost_.assign(static_cast<std::size_t>(N_), 0.0);
        for (int j = 0; j < n_; ++j)
            cost_[static_cast<std::size_t>(j)] = m.objective()[static_cast<std::size_t>(j)];
        base_lo_.resize(static_cast<std::size_t>(N_));
        base_hi_.resize(static_cast<std::size_t>(N_));
        for (int j = 0; j < n_; ++j) {
            base_lo_[static_cast<std::size_t>(j)] = m.var(j).lo;
            base_hi_[static_cast<std::size_t>(j)] = m.var(j).hi;
        }
        for (int i = 0; i < m_; ++i) {
            const auto& c = m.constraints()[static_cast<std::size_t>(i)];
            auto k = static_cast<std::size_t>(n_ + i);
            base_lo_[k] = c.sense == Sense::Le ? -kInf : c.rhs;
            base_hi_[k] = c.sense == Sense::Ge ? kInf : c.rhs;
        }
        obj_const_ = m.objective_constant();
    }

    int n() const { return n_; }
    int m() const { return m_; }

    /// Bounds for the next solve: base bounds with structural overrides.
    void reset_bounds() { lo_ = base_lo_, hi_ = base_hi_; }
    void set_struct_bounds(int j, double lo, double hi)
    {
        lo_[static_cast<std::size_t>(j)] = lo;
        hi_[static_cast<std::size_t>(j)] = hi;
    }

    void cold_basis()
    {
        head_.resize(static_cast<std::size_t>(m_));
        stat_.assign(static_cast<std::size_t>(N_), VarStat::AtLo);
        for (int i = 0; i < m_; ++i) {
            head_[static_cast<std::size_t>(i)] = n_ + i;
            stat_[static_cast<std::size_t>(n_ + i)] = VarStat::Basic;
        }
        factor_.factor(cols_, head_, m_);
        for (int j = 0; j < n_; ++j)
            stat_[static_cast<std::size_t>(j)] = VarStat::AtLo;  // priced in make_dual_feasible
    }

    void set_basis(const Basis& b)
    {
        head_ = b.head;
        stat_ = b.stat;
        factor_.invalidate();
    }

    Basis basis() const { return {head_, stat_}; }
    VarStat status(int j) const { return stat_[static_cast<std::size_t>(j)]; }


    LpOutcome solve(Clock::time_point deadline, double cutoff = kInf)
    {
        art_lo_.assign(static_cast<std::size_t>(N_), false);
        art_hi_.assign(static_cast<std::size_t>(N_), false);
        if (!factor_.valid() && !refactor())
            cold_basis_after_failure();
        compute_duals();
        make_dual_feasible();
        compute_primal();

        const long first_iteration = iterations_;
        long since_refactor = 0;
        double last_obj = -kInf;
        long stall = 0;
        bool bland = false;
        std::vector<double> alpha(static_cast<std::size_t>(N_), 0.0);
        VectorXd rho(m_), u(m_);

        for (;;) {
            if (iterations_ - first_iteration >= opt_.max_iterations)
                return LpOutcome::IterationLimit;
            if ((iterations_ & 15) == 0 && Clock::now() >= deadline)
                return LpOutcome::TimeLimit;
            if (since_refactor >= opt_.refactor_period) {
                if (!refactor())
                    return LpOutcome::IterationLimit;
                compute_duals();
                make_dual_feasible();
                compute_primal();
                since_refactor = 0;
            }

            double obj = primal_objective();
            if (cutoff < kInf && !any_artificial_active() && obj >= cutoff)
                return LpOutcome::Cutoff;
            if (obj > last_obj + 1e-12 * (1.0 + std::abs(obj))) {
                last_obj = obj;
                stall = 0;
                bland = false;
            } else if (++stall > 50) {
                bland = true;
            }

            // Leaving row.
            int r = -1;
            double best = 0.0;
            for (int i = 0; i < m_; ++i) {
                auto j = static_cast<std::size_t>(head_[static_cast<std::size_t>(i)]);
                double v = x_[j];
                double inf = 0.0;
                if (v < lo_[j] - opt_.primal_tol)
                    inf = lo_[j] - v;
                else if (v > hi_[j] + opt_.primal_tol)
                    inf = v - hi_[j];
                if (inf <= 0.0)
                    continue;
                if (bland) {
                    if (r < 0 || head_[static_cast<std::size_t>(i)] < head_[static_cast<std::size_t>(r)])
                        r = i;
                } else if (inf > best) {
                    best = inf;
                    r = i;
                }
            }
            if (r < 0)
                return finish_optimal();

            auto jr = static_cast<std::size_t>(head_[static_cast<std::size_t>(r)]);
            bool to_lower = x_[jr] < lo_[jr];
            rho.setZero();
            rho[r] = 1.0;
            factor_.btran(rho);

            // Ratio test over nonbasic columns.
            double theta_max = kInf;
            for (int j = 0; j < N_; ++j) {
                auto sj = static_cast<std::size_t>(j);
                alpha[sj] = 0.0;
                if (stat_[sj] == VarStat::Basic || lo_[sj] == hi_[sj])
                    continue;
                double a = 0.0;
                const auto& c = cols_[sj];
                for (std::size_t k = 0; k < c.row.size(); ++k)
                    a += rho[c.row[k]] * c.val[k];
                alpha[sj] = a;
                if (!eligible(sj, a, to_lower))
                    continue;
                double ratio = (std::abs(d_[sj]) + opt_.dual_tol) / std::abs(a);
                theta_max = std::min(theta_max, ratio);
            }
            if (theta_max == kInf)
                return LpOutcome::Infeasible;

            int q = -1;
            double q_meas = -1.0;
            for (int j = 0; j < N_; ++j) {
                auto sj = static_cast<std::size_t>(j);
                double a = alpha[sj];
                if (a == 0.0 || !eligible(sj, a, to_lower))
                    continue;
                double ratio = std::abs(d_[sj]) / std::abs(a);
                if (bland) {
                    if (q < 0 || ratio < q_meas - 1e-15) {
                        q = j;
                        q_meas = ratio;
                    }
                } else if (ratio <= theta_max && std::abs(a) > q_meas) {
                    q = j;
                    q_meas = std::abs(a);
                }
            }
            if (q < 0)
                return LpOutcome::Infeasible;
            auto sq = static_cast<std::size_t>(q);

            // Dual update.
            double theta_d = d_[sq] / alpha[sq];
            for (int j = 0; j < N_; ++j) {
                auto sj = static_cast<std::size_t>(j);
                if (stat_[sj] != VarStat::Basic && alpha[sj] != 0.0)
                    d_[sj] -= theta_d * alpha[sj];
            }
            d_[sq] = 0.0;
            d_[jr] = -theta_d;

            // Primal update.
            u.setZero();
            const auto& cq = cols_[sq];
            for (std::size_t k = 0; k < cq.row.size(); ++k)
                u[cq.row[k]] += cq.val[k];
            factor_.ftran(u);
            double bound = to_lower ? lo_[jr] : hi_[jr];
            double dx = (x_[jr] - bound) / u[r];
            for (int i = 0; i < m_; ++i)
                x_[static_cast<std::size_t>(head_[static_cast<std::size_t>(i)])] -= u[i] * dx;
            x_[sq] += dx;
            x_[jr] = bound;

            // Basis change.
            factor_.update(r, u);
            head_[static_cast<std::size_t>(r)] = q;
            stat_[sq] = VarStat::Basic;
            stat_[jr] = to_lower ? VarStat::AtLo : VarStat::AtHi;
            ++iterations_;
            ++since_refactor;
        }
    }

    std::vector<double> x_;
    std::vector<double> d_;
    long iterations_ = 0;
    std::vector<double> lo_, hi_;
    std::vector<double> base_lo_, base_hi_;
    double obj_const_ = 0.0;
    std::vector<double> cost_;
    bool unbounded_hint_ = false;

    double primal_objective() const
    {
        double f = obj_const_;
        for (int j = 0; j < n_; ++j)
            f += cost_[static_cast<std::size_t>(j)] * x_[static_cast<std::size_t>(j)];
        return f;
    }

    /// Lagrangian bound from the current duals against the true (non-artificial) bounds.
    double dual_bound() const
    {
        double b = obj_const_;
        for (int j = 0; j < N_; ++j) {
            auto sj = static_cast<std::size_t>(j);
            double dj = d_[sj];
            double lo = lo_[sj], hi = hi_[sj];
            if (std::abs(dj) <= 1e-10 && (lo == -kInf || hi == kInf))
                continue;
            if (dj > 0.0) {
                if (lo == -kInf)
                    return -kInf;
                b += dj * lo;
            } else if (dj < 0.0) {
                if (hi == kInf)
                    return -kInf;
                b += dj * hi;
            }
        }
        return b;
    }

private:
    bool eligible(std::size_t j, double a, bool to_lower) const
    {
        if (std::abs(a) <= kPivTol)
            return false;
        switch (stat_[j]) {
        case VarStat::AtLo: return to_lower ? a < 0.0 : a > 0.0;
        case VarStat::AtHi: return to_lower ? a > 0.0 : a < 0.0;
        case VarStat::Free: return true;
        default: return false;
        }
    }

    double eff_lo(std::size_t j) const { return art_lo_[j] ? -kBig : lo_[j]; }
    double eff_hi(std::size_t j) const { return art_hi_[j] ? kBig : hi_[j]; }

    bool any_artificial_active() const
    {
        for (int j = 0; j < N_; ++j) {
            auto sj = static_cast<std::size_t>(j);
            if ((art_lo_[sj] && stat_[sj] == VarStat::AtLo) || (art_hi_[sj] && stat_[sj] == VarStat::AtHi))
                return true;
        }
        return false;
    }

    bool refactor() { return factor_.factor(cols_, head_, m_); }

    void cold_basis_after_failure()
    {
        std::vector<VarStat> keep = stat_;
        cold_basis();
        for (int j = 0; j < n_; ++j) {
            auto sj = static_cast<std::size_t>(j);
            if (keep[sj] == VarStat::AtHi)
                stat_[sj] = VarStat::AtHi;
        }
    }

    void compute_duals()
    {
        VectorXd cb(m_);
        for (int i = 0; i < m_; ++i)
            cb[i] = cost_[static_cast<std::size_t>(head_[static_cast<std::size_t>(i)])];
        VectorXd y = cb;
        factor_.btran(y);
        d_.assign(static_cast<std::size_t>(N_), 0.0);
        for (int j = 0; j < N_; ++j) {
            auto sj = static_cast<std::size_t>(j);
            if (stat_[sj] == VarStat::Basic)
                continue;
            double s = cost_[sj];
            const auto& c = cols_[sj];
            for (std::size_t k = 0; k < c.row.size(); ++k)
                s -= y[c.row[k]] * c.val[k];
            d_[sj] = s;
        }
    }

    // Place every nonbasic column on the bound its reduced cost asks for.
    void make_dual_feasible()
    {
        for (int j = 0; j < N_; ++j) {
            auto sj = static_cast<std::size_t>(j);
            if (stat_[sj] == VarStat::Basic)
                continue;
            double dj = d_[sj];
            bool has_lo = lo_[sj] > -kInf, has_hi = hi_[sj] < kInf;
            if (lo_[sj] == hi_[sj]) {
                stat_[sj] = VarStat::AtLo;
                continue;
            }
            if (dj > opt_.dual_tol) {
                stat_[sj] = VarStat::AtLo;
                if (!has_lo)
                    art_lo_[sj] = true;
            } else if (dj < -opt_.dual_tol) {
                stat_[sj] = VarStat::AtHi;
                if (!has_hi)
                    art_hi_[sj] = true;
            } else {
                if (stat_[sj] == VarStat::AtLo && has_lo)
                    continue;
                if (stat_[sj] == VarStat::AtHi && has_hi)
                    continue;
                stat_[sj] = has_lo ? VarStat::AtLo : has_hi ? VarStat::AtHi : VarStat::Free;
            }
        }
    }

    void compute_primal()
    {
        x_.assign(static_cast<std::size_t>(N_), 0.0);
        VectorXd rhs = VectorXd::Zero(m_);
        for (int j = 0; j < N_; ++j) {
            auto sj = static_cast<std::size_t>(j);
            double v = 0.0;
            switch (stat_[sj]) {
            case VarStat::Basic: continue;
            case VarStat::AtLo: v = eff_lo(sj); break;
            case VarStat::AtHi: v = eff_hi(sj); break;
            case VarStat::Free: v = 0.0; break;
            }
            x_[sj] = v;
            if (v == 0.0)
                continue;
            const auto& c = cols_[sj];
            for (std::size_t k = 0; k < c.row.size(); ++k)
                rhs[c.row[k]] -= c.val[k] * v;
        }
        VectorXd xb = rhs;
        factor_.ftran(xb);
        for (int i = 0; i < m_; ++i)
            x_[static_cast<std::size_t>(head_[static_cast<std::size_t>(i)])] = xb[i];
    }

    LpOutcome finish_optimal()
    {
        compute_duals();
        for (int j = 0; j < N_; ++j) {
            auto sj = static_cast<std::size_t>(j);
            if (std::abs(x_[sj]) >= 0.5 * kBig)
                return LpOutcome::Unbounded;
            if ((art_lo_[sj] && stat_[sj] == VarStat::AtLo) || (art_hi_[sj] && stat_[sj] == VarStat::AtHi))
                return LpOutcome::Unbounded;
        }
        return LpOutcome::Optimal;
    }

    LpOptions opt_;
    int n_ = 0, m_ = 0, N_ = 0;
    std::vector<SparseCol> cols_;
    std::vector<int> head_;
    std::vector<VarStat> stat_;
    std::vector<bool> art_lo_, art_hi_;
    BasisFactor factor_;
};

SolveStatus to_status(LpOutcome o)
{
    switch (o) {
    case LpOutcome::Optimal: return SolveStatus::Optimal;
    case LpOutcome::Infeasible: return SolveStatus::Infeasible;
    case LpOutcome::Unbounded: return SolveStatus::Unbounded;
    case LpOutcome::TimeLimit: return SolveStatus::TimeLimit;
    case LpOutcome::IterationLimit: return SolveStatus::IterationLimit;
    case LpOutcome::Cutoff: return SolveStatus::Infeasible;
    }
    return SolveStatus::Infeasible;
}

Clock::time_point deadline_after(Clock::time_point start, double seconds)
{
    if (!(seconds < 1e9))
        return Clock::time_point::max();
    return start + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(seconds));
}

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Snap a point onto its bounds; the simplex leaves basic values within the primal tolerance.
void clamp_to_bounds(const OptModel& m, std::vector<double>& x)
{
    for (int j = 0; j < m.num_vars(); ++j) {
        auto sj = static_cast<std::size_t>(j);
        x[sj] = std::clamp(x[sj], m.var(j).lo, m.var(j).hi);
        if (m.var(j).binary)
            x[sj] = x[sj] < 0.5 ? m.var(j).lo : m.var(j).hi;
    }
}

}  // namespace

Solution solve_lp(const OptModel& model, const LpOptions& opt)
{
    auto t0 = Clock::now();
    OptModel m = model.lowered();
    DualSimplex ds(m, opt);
    ds.reset_bounds();
    ds.cold_basis();
    LpOutcome out = ds.solve(deadline_after(t0, opt.time_limit_s));

    Solution s;
    s.status = to_status(out);
    s.iterations = ds.iterations_;
    if (out == LpOutcome::Optimal) {
        std::vector<double> x(ds.x_.begin(), ds.x_.begin() + m.num_vars());
        for (int j = 0; j < m.num_vars(); ++j) {
            auto sj = static_cast<std::size_t>(j);
            x[sj] = std::clamp(x[sj], m.var(j).lo, m.var(j).hi);
        }
        s.objective = m.evaluate_objective(x);
        s.values.assign(x.begin(), x.begin() + model.num_vars());
        s.row_duals.assign(ds.d_.begin() + ds.n(), ds.d_.begin() + ds.n() + model.num_constraints());
        s.reduced_costs.assign(ds.d_.begin(), ds.d_.begin() + model.num_vars());
        s.dual_bound = ds.dual_bound();
        s.best_bound = s.objective;
        s.gap = 0.0;
    }
    s.solve_time_s = seconds_since(t0);
    return s;
}

Solution solve_milp(const OptModel& model, double time_limit_s)
{
    MilpOptions opt;
    opt.time_limit_s = time_limit_s;
    return solve_milp(model, opt);
}

namespace {

struct Node {
    long id = 0;
    long parent = -1;
    double bound = -kInf;
    std::vector<std::int8_t> fix;  // per binary: -1 free, 0, 1
    Basis basis;
};

struct NodeOrder {
    bool operator()(const std::shared_ptr<Node>& a, const std::shared_ptr<Node>& b) const
    {
        if (a->bound != b->bound)
            return a->bound > b->bound;
        return a->id > b->id;
    }
};

}  // namespace

Solution solve_milp(const OptModel& model, const MilpOptions& opt)
{
    auto t0 = Clock::now();
    auto deadline = deadline_after(t0, opt.time_limit_s);
    OptModel m = model.lowered();
    std::vector<int> bins;
    for (int j = 0; j < m.num_vars(); ++j)
        if (m.var(j).binary)
            bins.push_back(j);

    DualSimplex ds(m, opt.lp);
    Solution best;
    best.status = SolveStatus::Infeasible;
    double incumbent = kInf;
    std::vector<double> inc_x;

    std::priority_queue<std::shared_ptr<Node>, std::vector<std::shared_ptr<Node>>, NodeOrder> open;
    long next_id = 0;
    auto root = std::make_shared<Node>();
    root->id = next_id++;
    root->fix.assign(bins.size(), -1);

    long nodes = 0;
    bool timed_out = false;
    bool unbounded = false;

    auto apply_bounds = [&](const std::vector<std::int8_t>& fix) {
        ds.reset_bounds();
        for (std::size_t k = 0; k < bins.size(); ++k)
            if (fix[k] >= 0)
                ds.set_struct_bounds(bins[k], fix[k], fix[k]);
    };
    auto cutoff_value = [&] { return incumbent - std::max(opt.abs_gap, opt.rel_gap * std::abs(incumbent)); };

    // Re-solve with every binary pinned, starting from the current basis; offers the result as incumbent.
    auto try_fixed = [&](const std::vector<std::int8_t>& fix) {
        Basis keep = ds.basis();
        apply_bounds(fix);
        bool ok = ds.solve(deadline) == LpOutcome::Optimal;
        std::vector<double> x(ds.x_.begin(), ds.x_.begin() + m.num_vars());
        ds.set_basis(keep);
        if (!ok)
            return false;
        clamp_to_bounds(m, x);
        if (m.max_violation(x) > 1e-6)
            return false;
        double val = m.evaluate_objective(x);
        if (val < incumbent) {
            incumbent = val;
            inc_x = std::move(x);
        }
        return true;
    };

    // Depth-first dive from the last branched node, best-first once the dive ends.
    std::shared_ptr<Node> dive = root;
    while (dive || !open.empty()) {
        std::shared_ptr<Node> node;
        bool warm = false;
        if (dive) {
            node = std::move(dive);
            dive.reset();
            warm = node->parent >= 0;
        } else {
            node = open.top();
            if (node->bound >= cutoff_value()) {
                // Best-first: every open node is dominated.
                while (!open.empty())
                    open.pop();
                break;
            }
            open.pop();
        }
        double cutoff = cutoff_value();
        if (node->bound >= cutoff)
            continue;
        if (Clock::now() >= deadline || nodes >= opt.max_nodes) {
            timed_out = true;
            open.push(node);
            break;
        }
        ++nodes;

        apply_bounds(node->fix);
        if (node->parent < 0)
            ds.cold_basis();
        else if (!warm)
            ds.set_basis(node->basis);
        LpOutcome out = ds.solve(deadline, cutoff);
        if (out == LpOutcome::IterationLimit) {
            ds.cold_basis();
            out = ds.solve(deadline, cutoff);
        }
        if (out == LpOutcome::TimeLimit) {
            timed_out = true;
            open.push(node);
            break;
        }
        if (out == LpOutcome::Unbounded) {
            if (node->parent < 0) {
                unbounded = true;
                break;
            }
            continue;
        }
        if (out != LpOutcome::Optimal)
            continue;  // infeasible, cut off, or numerically stuck
        double obj = ds.primal_objective();
        if (obj >= cutoff)
            continue;

        // Reduced-cost fixing: a free binary whose flip alone would reach the cutoff stays put below this node.
        std::vector<std::int8_t> fix = node->fix;
        if (cutoff < kInf) {
            for (std::size_t k = 0; k < bins.size(); ++k) {
                if (fix[k] >= 0)
                    continue;
                auto j = static_cast<std::size_t>(bins[k]);
                double d = ds.d_[j];
                if (ds.status(bins[k]) == VarStat::AtLo && ds.x_[j] <= 0.5 && obj + d >= cutoff)
                    fix[k] = 0;
                else if (ds.status(bins[k]) == VarStat::AtHi && ds.x_[j] >= 0.5 && obj - d >= cutoff)
                    fix[k] = 1;
            }
        }

        // Most fractional binary, ties to the lowest index.
        int branch = -1;
        double frac_best = -1.0;
        for (std::size_t k = 0; k < bins.size(); ++k) {
            double v = ds.x_[static_cast<std::size_t>(bins[k])];
            double f = std::abs(v - std::round(v));
            if (f > opt.integrality_tol && f > frac_best + 1e-12) {
                frac_best = f;
                branch = static_cast<int>(k);
            }
        }
        if (branch < 0) {
            // Integral: polish with binaries pinned so the point satisfies the rows exactly.
            for (std::size_t k = 0; k < bins.size(); ++k)
                fix[k] = ds.x_[static_cast<std::size_t>(bins[k])] > 0.5 ? 1 : 0;
            std::vector<double> x(ds.x_.begin(), ds.x_.begin() + m.num_vars());
            if (!try_fixed(fix)) {
                clamp_to_bounds(m, x);
                double val = m.evaluate_objective(x);
                if (val < incumbent) {
                    incumbent = val;
                    inc_x = std::move(x);
                }
            }
            continue;
        }

        if (opt.heuristic && (nodes == 1 || (opt.heuristic_period > 0 && nodes % opt.heuristic_period == 0))) {
            std::vector<double> x(ds.x_.begin(), ds.x_.begin() + m.num_vars());
            std::vector<double> guess(x.size(), -1.0);
            if (opt.heuristic(x, guess)) {
                std::vector<std::int8_t> pin = fix;
                bool consistent = true;
                for (std::size_t k = 0; k < bins.size(); ++k) {
                    double g = guess[static_cast<std::size_t>(bins[k])];
                    auto v = static_cast<std::int8_t>(g > 0.5 ? 1 : 0);
                    if (g < 0.0 || (pin[k] >= 0 && pin[k] != v)) {
                        consistent = consistent && g >= 0.0;
                        v = pin[k] >= 0 ? pin[k] : static_cast<std::int8_t>(ds.x_[static_cast<std::size_t>(bins[k])] > 0.5);
                    }
                    pin[k] = v;
                }
                if (consistent)
                    try_fixed(pin);
            }
            cutoff = cutoff_value();
            if (obj >= cutoff)
                continue;
        }

        double v = ds.x_[static_cast<std::size_t>(bins[static_cast<std::size_t>(branch)])];
        int first = v >= 0.5 ? 1 : 0;
        auto child = [&](int side) {
            auto c = std::make_shared<Node>();
            c->id = next_id++;
            c->parent = node->id;
            c->bound = obj;
            c->fix = fix;
            c->fix[static_cast<std::size_t>(branch)] = static_cast<std::int8_t>(side);
            return c;
        };
        auto dive_child = child(first);
        auto other = child(1 - first);
        other->basis = ds.basis();
        open.push(other);
        dive = std::move(dive_child);
    }

    double global_bound = incumbent;
    if (!open.empty())
        global_bound = std::min(global_bound, open.top()->bound);

    best.node_count = nodes;
    best.iterations = ds.iterations_;
    if (unbounded) {
        best.status = SolveStatus::Unbounded;
    } else if (timed_out) {
        best.status = SolveStatus::TimeLimit;
        best.best_bound = global_bound;
        if (!inc_x.empty()) {
            best.values.assign(inc_x.begin(), inc_x.begin() + model.num_vars());
            best.objective = incumbent;
            best.gap = global_bound == -kInf ? kInf
                                             : std::max(0.0, incumbent - global_bound) / std::max(1.0, std::abs(incumbent));
        }
    } else if (!inc_x.empty()) {
        best.status = SolveStatus::Optimal;
        best.values.assign(inc_x.begin(), inc_x.begin() + model.num_vars());
        best.objective = incumbent;
        best.best_bound = incumbent;
        best.gap = 0.0;
    }
    best.solve_time_s = seconds_since(t0);
    return best;
}

}  // namespace freqopf
