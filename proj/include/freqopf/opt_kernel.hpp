#pragma once

// Small dense LP/MILP kernel: bounded dual simplex plus best-first branch and
// bound over binary variables. Models are built once and never mutated by the
// solvers, so independent solves may run concurrently.

#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace freqopf {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Sense { Le, Eq, Ge };

struct Variable {
    std::string name;
    double lo = 0.0;
    double hi = kInf;
    bool binary = false;
};

struct LinTerm {
    int var = -1;
    double coef = 0.0;
};

struct Constraint {
    std::string name;
    std::vector<LinTerm> terms;
    Sense sense = Sense::Le;
    double rhs = 0.0;
};

/// Convex piecewise-linear function given by its breakpoints.
struct PwlCost {
    std::vector<std::pair<double, double>> breakpoints;  ///< (P, cost), P strictly increasing

    std::vector<double> slopes() const;
    double eval(double p) const;
};

/// Chords of a*P^2 + b*P + c on n_seg equal segments of [p_min, p_max]. Throws NonConvexCost.
PwlCost pwl_quadratic(double a, double b, double c, double p_min, double p_max, int n_seg);

/// Worst-case over-estimate of pwl_quadratic: a * ((p_max - p_min) / n_seg)^2 / 4.
double pwl_error_bound(double a, double p_min, double p_max, int n_seg);

struct PwlTerm {
    int var = -1;
    PwlCost cost;
};

class OptModel {
public:
    int add_var(std::string name, double lo, double hi, bool binary = false);
    int add_constraint(std::string name, std::vector<LinTerm> terms, Sense sense, double rhs);
    void add_objective(int var, double coef);
    void add_objective_constant(double c) { obj_const_ += c; }
    void add_pwl_objective(int var, PwlCost cost);

    void set_bounds(int var, double lo, double hi);
    void replace_constraint(int row, std::vector<LinTerm> terms, Sense sense, double rhs);
    /// Drops every objective term (linear, PWL and constant).
    void clear_objective();

    int num_vars() const { return static_cast<int>(vars_.size()); }
    int num_constraints() const { return static_cast<int>(cons_.size()); }
    int num_binaries() const;
    const Variable& var(int j) const { return vars_[static_cast<std::size_t>(j)]; }
    const std::vector<Variable>& vars() const { return vars_; }
    const std::vector<Constraint>& constraints() const { return cons_; }
    const std::vector<double>& objective() const { return obj_; }
    double objective_constant() const { return obj_const_; }
    const std::vector<PwlTerm>& pwl_terms() const { return pwl_; }

    /// Objective value of a full assignment, PWL terms evaluated exactly.
    double evaluate_objective(const std::vector<double>& x) const;
    /// Largest constraint violation of an assignment.
    double max_violation(const std::vector<double>& x) const;

    /// Throws InvalidModel on undeclared variables, lo > hi, non-finite data or non-convex PWL terms.
    void validate() const;

    /// Equivalent model with every PWL term replaced by bounded segment variables.
    OptModel lowered() const;

    /// CPLEX LP text of the lowered model.
    std::string to_lp_text() const;

private:
    std::vector<Variable> vars_;
    std::vector<Constraint> cons_;
    std::vector<double> obj_;
    double obj_const_ = 0.0;
    std::vector<PwlTerm> pwl_;
};

enum class SolveStatus { Optimal, Infeasible, Unbounded, TimeLimit, IterationLimit };

const char* status_name(SolveStatus s);

struct Solution {
    SolveStatus status = SolveStatus::Infeasible;
    std::vector<double> values;      ///< one per model variable (empty without a point)
    double objective = kInf;
    double solve_time_s = 0.0;
    long node_count = 0;
    long iterations = 0;
    double gap = kInf;               ///< relative MILP gap; 0 when proven optimal
    double best_bound = -kInf;

    // LP only.
    std::vector<double> row_duals;       ///< y_i, d(objective)/d(rhs_i)
    std::vector<double> reduced_costs;   ///< c_j - y^T a_j
    double dual_bound = -kInf;           ///< Lagrangian bound from row_duals and the original bounds
};

struct LpOptions {
    double time_limit_s = kInf;
    long max_iterations = 200000;
    double primal_tol = 1e-9;
    double dual_tol = 1e-9;
    int refactor_period = 64;
};

struct MilpOptions {
    double time_limit_s = 60.0;
    double rel_gap = 1e-9;
    double abs_gap = 1e-9;
    double integrality_tol = 1e-6;
    long max_nodes = 10000000;
    LpOptions lp;
    /// Optional primal heuristic. Receives a relaxed point and fills 0/1 guesses for the
    /// binary variables (by variable index, -1 = no opinion); the kernel re-solves with them pinned.
    std::function<bool(const std::vector<double>&, std::vector<double>&)> heuristic;
    int heuristic_period = 20;
};

/// Solves the continuous relaxation (binary markers ignored).
Solution solve_lp(const OptModel& m, const LpOptions& opt = {});

Solution solve_milp(const OptModel& m, double time_limit_s);
Solution solve_milp(const OptModel& m, const MilpOptions& opt);

}  // namespace freqopf
