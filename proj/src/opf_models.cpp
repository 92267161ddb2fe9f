#include "freqopf/opf_models.hpp"

#include "freqopf/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>

namespace freqopf {

using Eigen::VectorXd;

const char* encoding_name(EncodingKind k)
{
    switch (k) {
    case EncodingKind::BPWL: return "BPWL";
    case EncodingKind::CTAR: return "CTAR";
    case EncodingKind::PCTAR: return "P-CTAR";
    case EncodingKind::PCAR: return "PCAR";
    }
    return "?";
}

EncodingKind parse_encoding(const std::string& s)
{
    std::string u;
    for (char c : s)
        if (c != '-' && c != '_')
            u.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    if (u == "BPWL")
        return EncodingKind::BPWL;
    if (u == "CTAR")
        return EncodingKind::CTAR;
    if (u == "PCTAR")
        return EncodingKind::PCTAR;
    if (u == "PCAR")
        return EncodingKind::PCAR;
    throw Error(Errc::InvalidConfig, "unknown encoding '" + s + "'");
}

const char* model_name(ModelKind k)
{
    switch (k) {
    case ModelKind::TOPF: return "T-OPF";
    case ModelKind::LFCOPF: return "L-FCOPF";
    case ModelKind::DLFCOPF: return "DL-FCOPF";
    }
    return "?";
}

namespace {

double relu(double v) { return v > 0.0 ? v : 0.0; }

double bound_pad(double h) { return 1e-9 * (1.0 + std::abs(h)); }

// Writes the bound-dependent part of one neuron's encoding.
void encode_neuron(OptModel& m, EncodingKind kind, int zh, int z, int bin, std::pair<int, int> rows, double lo,
                   double hi)
{
    m.set_bounds(zh, lo, hi);
    m.set_bounds(z, relu(lo), relu(hi));
    if (kind == EncodingKind::BPWL) {
        m.set_bounds(bin, lo >= 0.0 ? 1.0 : 0.0, hi <= 0.0 ? 0.0 : 1.0);
        // z <= zhat - lo (1 - B), z <= hi B
        m.replace_constraint(rows.first, {{z, 1.0}, {zh, -1.0}, {bin, -lo}}, Sense::Le, -lo);
        m.replace_constraint(rows.second, {{z, 1.0}, {bin, -relu(hi)}}, Sense::Le, 0.0);
    } else if (kind == EncodingKind::CTAR || kind == EncodingKind::PCTAR) {
        if (hi - lo > 1e-12) {
            double s = (relu(hi) - relu(lo)) / (hi - lo);
            m.replace_constraint(rows.first, {{z, 1.0}, {zh, -s}}, Sense::Le, relu(lo) - s * lo);
        } else {
            m.replace_constraint(rows.first, {{z, 1.0}}, Sense::Le, relu(hi));
        }
    }
}

}  // namespace

EmbeddedNetwork embed_network(OptModel& m, const MlpNet& net, const NeuronBounds& bounds, const EncodingChoice& enc,
                              const std::vector<InputWire>& wiring)
{
    net.check();
    const int nin = net.input_dim();
    const int L = net.hidden_layers();
    if (static_cast<int>(wiring.size()) != nin)
        throw Error(Errc::DimensionMismatch, "wiring has " + std::to_string(wiring.size()) + " features, net expects " +
                                                 std::to_string(nin));
    if (static_cast<int>(bounds.lo.size()) != L || static_cast<int>(bounds.hi.size()) != L)
        throw Error(Errc::DimensionMismatch, "neuron bounds do not match the hidden layers");
    if (bounds.box_lo.size() != nin || bounds.box_hi.size() != nin)
        throw Error(Errc::DimensionMismatch, "neuron bounds carry no matching input box");

    for (int j = 0; j < nin; ++j) {
        const auto& w = wiring[static_cast<std::size_t>(j)];
        double lo = w.constant, hi = w.constant;
        if (w.var >= 0) {
            const auto& v = m.var(w.var);
            lo = w.scale >= 0 ? w.scale * v.lo : w.scale * v.hi;
            hi = w.scale >= 0 ? w.scale * v.hi : w.scale * v.lo;
        }
        double tol = 1e-9 * (1.0 + std::abs(bounds.box_lo[j]) + std::abs(bounds.box_hi[j]));
        if (lo < bounds.box_lo[j] - tol || hi > bounds.box_hi[j] + tol)
            throw Error(Errc::UnsoundBounds, "feature " + std::to_string(j) + " range [" + std::to_string(lo) + ", " +
                                                 std::to_string(hi) + "] exceeds the bound box");
    }

    EmbeddedNetwork e;
    e.encoding = enc;
    const auto& mu = net.input_norm.mean;
    const auto& sd = net.input_norm.stddev;
    std::vector<int> prev;
    for (int l = 0; l < L; ++l) {
        const auto& W = net.weights[static_cast<std::size_t>(l)];
        const auto& b = net.biases[static_cast<std::size_t>(l)];
        const auto& hl = bounds.lo[static_cast<std::size_t>(l)];
        const auto& hu = bounds.hi[static_cast<std::size_t>(l)];
        std::vector<int> pre, post, bins;
        std::vector<std::pair<int, int>> rows_l;
        for (Eigen::Index i = 0; i < W.rows(); ++i) {
            std::string tag = std::to_string(l) + "_" + std::to_string(i);
            double lo = hl[i] - bound_pad(hl[i]);
            double hi = hu[i] + bound_pad(hu[i]);
            int zh = m.add_var("zhat_" + tag, lo, hi);
            int z = m.add_var("z_" + tag, relu(lo), relu(hi));
            std::vector<LinTerm> terms{{zh, 1.0}};
            double rhs = b[i];
            if (l == 0) {
                for (int j = 0; j < nin; ++j) {
                    const auto& w = wiring[static_cast<std::size_t>(j)];
                    double coef = W(i, j) / sd[j];
                    rhs -= coef * mu[j];
                    if (w.var >= 0) {
                        if (coef != 0.0)
                            terms.push_back({w.var, -coef * w.scale});
                    } else {
                        rhs += coef * w.constant;
                    }
                }
            } else {
                for (std::size_t j = 0; j < prev.size(); ++j)
                    if (W(i, static_cast<Eigen::Index>(j)) != 0.0)
                        terms.push_back({prev[j], -W(i, static_cast<Eigen::Index>(j))});
            }
            m.add_constraint("layer_" + tag, std::move(terms), Sense::Eq, rhs);

            m.add_constraint("relu_lb_" + tag, {{z, 1.0}, {zh, -1.0}}, Sense::Ge, 0.0);
            int bin = -1;
            std::pair<int, int> rows{-1, -1};
            if (enc.kind == EncodingKind::BPWL) {
                bin = m.add_var("B_" + tag, 0.0, 1.0, true);
                rows.first = m.add_constraint("relu_on_" + tag, {}, Sense::Le, 0.0);
                rows.second = m.add_constraint("relu_off_" + tag, {}, Sense::Le, 0.0);
            } else if (enc.kind == EncodingKind::CTAR || enc.kind == EncodingKind::PCTAR) {
                rows.first = m.add_constraint("relu_chord_" + tag, {}, Sense::Le, 0.0);
            }
            if (enc.kind == EncodingKind::PCTAR || enc.kind == EncodingKind::PCAR)
                m.add_objective(z, enc.penalty);
            encode_neuron(m, enc.kind, zh, z, bin, rows, lo, hi);
            if (bin >= 0 && lo < 0.0 && hi > 0.0)
                ++e.binary_count;
            rows_l.push_back(rows);
            pre.push_back(zh);
            post.push_back(z);
            bins.push_back(bin);
        }
        e.pre.push_back(pre);
        e.post.push_back(post);
        e.binaries.push_back(bins);
        e.relu_rows.push_back(rows_l);
        prev = std::move(post);
    }

    const auto& W = net.weights.back();
    const auto& b = net.biases.back();
    const auto& omu = net.output_norm.mean;
    const auto& osd = net.output_norm.stddev;
    for (Eigen::Index k = 0; k < W.rows(); ++k) {
        int y = m.add_var("y_" + std::to_string(k), -kInf, kInf);
        std::vector<LinTerm> terms{{y, 1.0}};
        if (L == 0) {
            double rhs = osd[k] * b[k] + omu[k];
            for (int j = 0; j < nin; ++j) {
                const auto& w = wiring[static_cast<std::size_t>(j)];
                double coef = osd[k] * W(k, j) / sd[j];
                rhs -= coef * mu[j];
                if (w.var >= 0)
                    terms.push_back({w.var, -coef * w.scale});
                else
                    rhs += coef * w.constant;
            }
            m.add_constraint("output_" + std::to_string(k), std::move(terms), Sense::Eq, rhs);
        } else {
            for (std::size_t j = 0; j < prev.size(); ++j)
                if (W(k, static_cast<Eigen::Index>(j)) != 0.0)
                    terms.push_back({prev[j], -osd[k] * W(k, static_cast<Eigen::Index>(j))});
            m.add_constraint("output_" + std::to_string(k), std::move(terms), Sense::Eq, osd[k] * b[k] + omu[k]);
        }
        e.outputs.push_back(y);
    }
    return e;
}

void set_neuron_bounds(OptModel& m, EmbeddedNetwork& e, std::size_t layer, std::size_t neuron, double lo, double hi)
{
    if (layer >= e.pre.size() || neuron >= e.pre[layer].size())
        throw Error(Errc::DimensionMismatch, "neuron index out of range");
    if (!(lo <= hi))
        throw Error(Errc::EmptyBox, "neuron interval is empty");
    int bin = e.binaries[layer][neuron];
    auto was_free = [&] { return bin >= 0 && m.var(bin).lo < m.var(bin).hi; };
    if (was_free())
        --e.binary_count;
    encode_neuron(m, e.encoding.kind, e.pre[layer][neuron], e.post[layer][neuron], bin, e.relu_rows[layer][neuron], lo,
                  hi);
    if (was_free())
        ++e.binary_count;
}

int tighten_neuron_bounds(OptModel& m, EmbeddedNetwork& e)
{
    int stabilized = 0;
    LpOptions lp;
    for (std::size_t l = 0; l < e.pre.size(); ++l) {
        OptModel probe = m;
        probe.clear_objective();
        std::vector<std::pair<double, double>> found(e.pre[l].size());
        for (std::size_t i = 0; i < e.pre[l].size(); ++i) {
            int zh = e.pre[l][i];
            double lo = m.var(zh).lo, hi = m.var(zh).hi;
            for (int dir : {1, -1}) {
                probe.clear_objective();
                probe.add_objective(zh, dir);
                Solution s = solve_lp(probe, lp);
                if (s.status == SolveStatus::Infeasible)
                    return stabilized;
                if (s.status != SolveStatus::Optimal)
                    continue;
                // The dual bound stays valid even if the primal point is slightly off.
                double v = dir * std::min(s.objective, s.dual_bound);
                double pad = 1e-7 * (1.0 + std::abs(v));
                if (dir > 0)
                    lo = std::max(lo, v - pad);
                else
                    hi = std::min(hi, v + pad);
            }
            found[i] = {lo, std::max(lo, hi)};
        }
        for (std::size_t i = 0; i < found.size(); ++i) {
            int zh = e.pre[l][i];
            bool unstable_before = m.var(zh).lo < 0.0 && m.var(zh).hi > 0.0;
            set_neuron_bounds(m, e, l, i, found[i].first, found[i].second);
            if (unstable_before && !(found[i].first < 0.0 && found[i].second > 0.0))
                ++stabilized;
        }
    }
    return stabilized;
}

double linearization_error(const EmbeddedNetwork& e, const std::vector<double>& x)
{
    double err = 0.0;
    for (std::size_t l = 0; l < e.pre.size(); ++l)
        for (std::size_t i = 0; i < e.pre[l].size(); ++i) {
            double zh = x.at(static_cast<std::size_t>(e.pre[l][i]));
            double z = x.at(static_cast<std::size_t>(e.post[l][i]));
            err = std::max(err, std::abs(z - relu(zh)));
        }
    return err;
}

OpfModel build_topf(const GridCase& gc, const OpfOptions& opt)
{
    // Too little capacity is left for the solver to report as Infeasible.
    auto problems = validate_case(gc);
    std::erase_if(problems, [](const std::string& p) { return p.starts_with("insolvable"); });
    if (!problems.empty())
        throw Error(Errc::ValidationError, "case is invalid: " + problems.front(), problems);
    if (opt.pwl_segments < 1)
        throw Error(Errc::InvalidConfig, "pwl_segments must be >= 1");

    OpfModel om;
    om.kind = ModelKind::TOPF;
    om.gc = gc;
    auto& m = om.model;
    const double S = gc.base_mva;

    for (const auto& g : gc.gens) {
        double lo = g.p_min_mw / S, hi = g.p_max_mw / S;
        int v = m.add_var("Pg_" + std::to_string(g.id), lo, hi);
        om.p_gen.push_back(v);
        auto cost = [&](double pu) {
            double p = pu * S;
            return g.cost_a * p * p + g.cost_b * p + g.cost_c;
        };
        if (hi - lo < 1e-12) {
            m.add_objective_constant(cost(lo));
            om.pwl_error_bound.push_back(0.0);
            continue;
        }
        // Chords in pu with costs in $/h.
        PwlCost pwl = pwl_quadratic(g.cost_a * S * S, g.cost_b * S, g.cost_c, lo, hi, opt.pwl_segments);
        m.add_pwl_objective(v, std::move(pwl));
        om.pwl_error_bound.push_back(pwl_error_bound(g.cost_a, g.p_min_mw, g.p_max_mw, opt.pwl_segments));
    }
    for (const auto& r : gc.ibrs)
        om.p_ibr.push_back(m.add_var("Pibr_" + std::to_string(r.id), 0.0, r.p_available_max_mw / S));
    for (const auto& b : gc.buses) {
        bool slack = b.id == gc.slack_bus;
        om.theta.push_back(m.add_var("theta_" + std::to_string(b.id), slack ? 0.0 : -kInf, slack ? 0.0 : kInf));
    }
    for (const auto& ln : gc.lines) {
        double lim = ln.thermal_limit_mw / S;
        int f = m.add_var("flow_" + std::to_string(ln.id), -lim, lim);
        om.flow.push_back(f);
        int a = om.theta[static_cast<std::size_t>(gc.bus_index(ln.from_bus))];
        int b = om.theta[static_cast<std::size_t>(gc.bus_index(ln.to_bus))];
        double y = 1.0 / ln.reactance_pu;
        m.add_constraint("flowdef_" + std::to_string(ln.id), {{f, 1.0}, {a, -y}, {b, y}}, Sense::Eq, 0.0);
    }
    std::vector<std::vector<LinTerm>> bal(gc.buses.size());
    for (std::size_t k = 0; k < gc.gens.size(); ++k)
        bal[static_cast<std::size_t>(gc.bus_index(gc.gens[k].bus))].push_back({om.p_gen[k], 1.0});
    for (std::size_t k = 0; k < gc.ibrs.size(); ++k)
        bal[static_cast<std::size_t>(gc.bus_index(gc.ibrs[k].bus))].push_back({om.p_ibr[k], 1.0});
    for (std::size_t k = 0; k < gc.lines.size(); ++k) {
        bal[static_cast<std::size_t>(gc.bus_index(gc.lines[k].from_bus))].push_back({om.flow[k], -1.0});
        bal[static_cast<std::size_t>(gc.bus_index(gc.lines[k].to_bus))].push_back({om.flow[k], 1.0});
    }
    for (std::size_t i = 0; i < gc.buses.size(); ++i)
        m.add_constraint("balance_" + std::to_string(gc.buses[i].id), std::move(bal[i]), Sense::Eq,
                         gc.buses[i].load_mw / S);
    return om;
}

OpfModel build_lfcopf(const GridCase& gc, const Contingency& c, const FreqLimits& limits, const OpfOptions& opt)
{
    check_contingency(gc, c);
    OpfModel om = build_topf(gc, opt);
    om.kind = ModelKind::LFCOPF;
    om.contingency = c;
    om.limits = limits;
    double hs = opt.include_outaged_inertia ? system_kinetic_energy_mws(gc)
                                            : system_kinetic_energy_mws(gc, c.outaged_gen_id);
    if (!(hs > 0.0))
        throw Error(Errc::EmptySystem, "no synchronous inertia remains after the outage");
    const double f0 = gc.base_freq_hz, S = gc.base_mva;
    om.rocof_coef = -f0 * S / (2.0 * hs);
    int v = om.p_gen[static_cast<std::size_t>(gc.gen_index(c.outaged_gen_id))];
    if (std::isfinite(limits.rocof_limit_hz_per_s)) {
        om.rocof_cap_pu = -limits.rocof_limit_hz_per_s * 2.0 * hs / (f0 * S);
        om.rocof_row = om.model.add_constraint("rocof_cap", {{v, 1.0}}, Sense::Le, om.rocof_cap_pu);
    }
    return om;
}

void predictor_input_box(const GridCase& gc, const Contingency& c, VectorXd& lo, VectorXd& hi)
{
    const double S = gc.base_mva;
    auto loads = gc.load_bus_ids();
    auto cands = gc.outage_candidate_ids();
    const auto n = gc.gens.size() + loads.size() + 2 * gc.ibrs.size() + cands.size();
    lo.resize(static_cast<Eigen::Index>(n));
    hi.resize(static_cast<Eigen::Index>(n));
    Eigen::Index k = 0;
    for (const auto& g : gc.gens) {
        lo[k] = g.p_min_mw / S;
        hi[k++] = g.p_max_mw / S;
    }
    for (int id : loads) {
        double v = gc.buses[static_cast<std::size_t>(gc.bus_index(id))].load_mw / S;
        lo[k] = v;
        hi[k++] = v;
    }
    for (int pass = 0; pass < 2; ++pass)
        for (const auto& r : gc.ibrs) {
            lo[k] = 0.0;
            hi[k++] = r.p_available_max_mw / S;
        }
    for (int id : cands) {
        double v = id == c.outaged_gen_id ? 1.0 : 0.0;
        lo[k] = v;
        hi[k++] = v;
    }
}

namespace {

void add_mccormick(OpfModel& om, std::size_t i, double alo, double ahi, bool replace)
{
    const double pbar = om.gc.ibrs[i].p_available_max_mw / om.gc.base_mva;
    int w = om.mccormick_w[i], p = om.p_ibr[i], a = om.alpha[i];
    // w = P * alpha with P in [0, pbar], alpha in [alo, ahi].
    struct Row {
        std::vector<LinTerm> t;
        Sense s;
        double rhs;
    };
    std::vector<Row> rows{
        {{{w, 1.0}, {p, -alo}}, Sense::Ge, 0.0},
        {{{w, 1.0}, {a, -pbar}, {p, -ahi}}, Sense::Ge, -pbar * ahi},
        {{{w, 1.0}, {a, -pbar}, {p, -alo}}, Sense::Le, -pbar * alo},
        {{{w, 1.0}, {p, -ahi}}, Sense::Le, 0.0},
    };
    if (replace) {
        for (std::size_t r = 0; r < 4; ++r)
            om.model.replace_constraint(om.mccormick_rows[i][r], rows[r].t, rows[r].s, rows[r].rhs);
    } else {
        std::vector<int> ids;
        for (std::size_t r = 0; r < 4; ++r)
            ids.push_back(om.model.add_constraint("mccormick_" + std::to_string(om.gc.ibrs[i].id) + "_" +
                                                      std::to_string(r),
                                                  rows[r].t, rows[r].s, rows[r].rhs));
        om.mccormick_rows.push_back(ids);
    }
    om.model.set_bounds(a, alo, ahi);
    if (replace)
        om.alpha_box[i] = {alo, ahi};
    else
        om.alpha_box.emplace_back(alo, ahi);
}

}  // namespace

OpfModel build_dlfcopf(const GridCase& gc, const Contingency& c, const MlpNet& net, const FreqLimits& limits,
                       const EncodingChoice& enc, const OpfOptions& opt)
{
    auto t0 = std::chrono::steady_clock::now();
    check_contingency(gc, c);
    if (enc.penalty < 0.0 || !std::isfinite(enc.penalty))
        throw Error(Errc::InvalidConfig, "penalty must be finite and non-negative");
    const std::size_t ni = gc.ibrs.size();
    if (net.output_dim() != static_cast<int>(2 * ni + 2))
        throw Error(Errc::DimensionMismatch, "predictor has " + std::to_string(net.output_dim()) +
                                                 " outputs, case needs " + std::to_string(2 * ni + 2));
    OpfModel om = build_topf(gc, opt);
    om.kind = ModelKind::DLFCOPF;
    om.contingency = c;
    om.limits = limits;
    om.encoding = enc;
    auto& m = om.model;
    const double S = gc.base_mva;

    for (std::size_t i = 0; i < ni; ++i) {
        const auto& r = gc.ibrs[i];
        double pbar = r.p_available_max_mw / S;
        std::string id = std::to_string(r.id);
        om.p_gfm.push_back(m.add_var("Pgfm_" + id, 0.0, pbar));
        om.mccormick_w.push_back(om.p_gfm.back());
        om.p_gfl.push_back(m.add_var("Pgfl_" + id, 0.0, pbar));
        om.alpha.push_back(m.add_var("alpha_" + id, 0.0, 1.0));
        m.add_constraint("ibr_split_" + id, {{om.p_gfm[i], 1.0}, {om.p_gfl[i], 1.0}, {om.p_ibr[i], -1.0}}, Sense::Eq,
                         0.0);
        add_mccormick(om, i, 0.0, 1.0, false);
    }

    std::vector<InputWire> wiring;
    for (int v : om.p_gen)
        wiring.push_back(InputWire::variable(v));
    for (int id : gc.load_bus_ids())
        wiring.push_back(InputWire::fixed(gc.buses[static_cast<std::size_t>(gc.bus_index(id))].load_mw / S));
    for (int v : om.p_gfm)
        wiring.push_back(InputWire::variable(v));
    for (int v : om.p_gfl)
        wiring.push_back(InputWire::variable(v));
    for (int id : gc.outage_candidate_ids())
        wiring.push_back(InputWire::fixed(id == c.outaged_gen_id ? 1.0 : 0.0));

    VectorXd lo, hi;
    predictor_input_box(gc, c, lo, hi);
    if (net.input_dim() != lo.size())
        throw Error(Errc::DimensionMismatch, "predictor has " + std::to_string(net.input_dim()) +
                                                 " inputs, case needs " + std::to_string(lo.size()));
    NeuronBounds nb = interval_bounds(net, lo, hi);
    om.net = embed_network(m, net, nb, enc, wiring);
    om.predictor = net;
    om.wiring = wiring;

    for (std::size_t i = 0; i < ni; ++i) {
        std::string id = std::to_string(gc.ibrs[i].id);
        om.out_alpha.push_back(om.net.outputs[i]);
        om.out_headroom.push_back(om.net.outputs[ni + i]);
        m.add_constraint("alpha_link_" + id, {{om.alpha[i], 1.0}, {om.out_alpha[i], -1.0}}, Sense::Eq, 0.0);
        m.add_constraint("headroom_link_" + id, {{om.p_ibr[i], 1.0}, {om.out_headroom[i], 1.0}}, Sense::Eq,
                         gc.ibrs[i].p_available_max_mw / S);
    }
    om.out_rocof = om.net.outputs[2 * ni];
    om.out_nadir = om.net.outputs[2 * ni + 1];
    if (std::isfinite(limits.rocof_limit_hz_per_s))
        om.rocof_row = m.add_constraint("rocof_limit", {{om.out_rocof, 1.0}}, Sense::Ge, limits.rocof_limit_hz_per_s);
    if (std::isfinite(limits.nadir_limit_hz))
        om.nadir_row = m.add_constraint("nadir_limit", {{om.out_nadir, 1.0}}, Sense::Ge, limits.nadir_limit_hz);
    if (enc.kind == EncodingKind::BPWL && opt.tighten_bpwl_bounds)
        tighten_neuron_bounds(m, om.net);
    om.build_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return om;
}

void set_alpha_box(OpfModel& om, std::size_t ibr, double lo, double hi)
{
    if (om.kind != ModelKind::DLFCOPF || ibr >= om.alpha.size())
        throw Error(Errc::InvalidConfig, "alpha box needs a DL-FCOPF model and a valid IBR index");
    if (!(0.0 <= lo && lo <= hi && hi <= 1.0))
        throw Error(Errc::EmptyBox, "alpha box must satisfy 0 <= lo <= hi <= 1");
    add_mccormick(om, ibr, lo, hi, true);
}

Dispatch extract_dispatch(const OpfModel& om, const Solution& s, bool allow_incumbent)
{
    bool ok = s.status == SolveStatus::Optimal || (allow_incumbent && s.status == SolveStatus::TimeLimit);
    if (!ok || s.values.size() != static_cast<std::size_t>(om.model.num_vars()))
        throw Error(Errc::NotOptimal, std::string("solution status is ") + status_name(s.status));
    const auto& gc = om.gc;
    const double S = gc.base_mva;
    const auto& x = s.values;
    auto val = [&](int v) { return x[static_cast<std::size_t>(v)]; };

    Dispatch d;
    for (std::size_t k = 0; k < gc.gens.size(); ++k) {
        d.gen_ids.push_back(gc.gens[k].id);
        d.p_gen_mw.push_back(val(om.p_gen[k]) * S);
    }
    for (std::size_t i = 0; i < gc.ibrs.size(); ++i) {
        double p = val(om.p_ibr[i]) * S;
        d.ibr_ids.push_back(gc.ibrs[i].id);
        d.p_ibr_mw.push_back(p);
        double gfm = 0.0, a = 0.0;
        if (om.kind == ModelKind::DLFCOPF) {
            gfm = std::clamp(val(om.p_gfm[i]) * S, 0.0, p);
            a = std::clamp(val(om.alpha[i]), 0.0, 1.0);
            d.predicted_headroom_mw.push_back(val(om.out_headroom[i]) * S);
        }
        d.p_gfm_mw.push_back(gfm);
        d.p_gfl_mw.push_back(p - gfm);
        d.alpha.push_back(a);
        d.headroom_mw.push_back(gc.ibrs[i].p_available_max_mw - p);
    }
    for (std::size_t b = 0; b < gc.buses.size(); ++b) {
        d.bus_ids.push_back(gc.buses[b].id);
        d.angle_rad.push_back(val(om.theta[b]));
    }
    for (std::size_t k = 0; k < gc.lines.size(); ++k) {
        d.line_ids.push_back(gc.lines[k].id);
        d.flow_mw.push_back(val(om.flow[k]) * S);
    }

    std::vector<double> inj(gc.buses.size(), 0.0);
    for (std::size_t b = 0; b < gc.buses.size(); ++b)
        inj[b] -= gc.buses[b].load_mw;
    for (std::size_t k = 0; k < gc.gens.size(); ++k)
        inj[static_cast<std::size_t>(gc.bus_index(gc.gens[k].bus))] += d.p_gen_mw[k];
    for (std::size_t i = 0; i < gc.ibrs.size(); ++i)
        inj[static_cast<std::size_t>(gc.bus_index(gc.ibrs[i].bus))] += d.p_ibr_mw[i];
    double worst_flow = 0.0;
    for (std::size_t k = 0; k < gc.lines.size(); ++k) {
        const auto& ln = gc.lines[k];
        auto a = static_cast<std::size_t>(gc.bus_index(ln.from_bus));
        auto b = static_cast<std::size_t>(gc.bus_index(ln.to_bus));
        double f = (d.angle_rad[a] - d.angle_rad[b]) / ln.reactance_pu * S;
        worst_flow = std::max(worst_flow, std::abs(f - d.flow_mw[k]) / S);
        inj[a] -= d.flow_mw[k];
        inj[b] += d.flow_mw[k];
    }
    double worst_bal = 0.0;
    for (double v : inj)
        worst_bal = std::max(worst_bal, std::abs(v) / S);
    if (worst_bal > 1e-6 || worst_flow > 1e-9)
        throw Error(Errc::NotOptimal, "solution breaks power balance (" + std::to_string(worst_bal) +
                                          " pu) or the flow definition (" + std::to_string(worst_flow) + " pu)");

    for (const auto& t : om.model.pwl_terms())
        d.total_cost += t.cost.eval(val(t.var));
    d.total_cost += om.model.objective_constant();
    if (om.kind == ModelKind::LFCOPF && om.contingency) {
        int k = gc.gen_index(om.contingency->outaged_gen_id);
        d.predicted_rocof_hz_s = om.rocof_coef * val(om.p_gen[static_cast<std::size_t>(k)]);
    }
    if (om.kind == ModelKind::DLFCOPF) {
        d.predicted_rocof_hz_s = val(om.out_rocof);
        d.predicted_nadir_hz = val(om.out_nadir);
    }
    d.solve_time_s = s.solve_time_s;
    return d;
}

VectorXd dispatch_features(const GridCase& gc, const Dispatch& d, const Contingency& c)
{
    const double S = gc.base_mva;
    auto loads = gc.load_bus_ids();
    auto cands = gc.outage_candidate_ids();
    if (d.p_gen_mw.size() != gc.gens.size() || d.p_gfm_mw.size() != gc.ibrs.size() ||
        d.p_gfl_mw.size() != gc.ibrs.size())
        throw Error(Errc::DimensionMismatch, "dispatch does not match the case");
    VectorXd x(static_cast<Eigen::Index>(gc.gens.size() + loads.size() + 2 * gc.ibrs.size() + cands.size()));
    Eigen::Index k = 0;
    for (double p : d.p_gen_mw)
        x[k++] = p / S;
    for (int id : loads)
        x[k++] = gc.buses[static_cast<std::size_t>(gc.bus_index(id))].load_mw / S;
    for (double p : d.p_gfm_mw)
        x[k++] = p / S;
    for (double p : d.p_gfl_mw)
        x[k++] = p / S;
    for (int id : cands)
        x[k++] = id == c.outaged_gen_id ? 1.0 : 0.0;
    return x;
}

double mccormick_gap_mw(const OpfModel& om, const std::vector<double>& x)
{
    double gap = 0.0;
    for (std::size_t i = 0; i < om.p_gfm.size(); ++i) {
        double w = x.at(static_cast<std::size_t>(om.p_gfm[i]));
        double p = x.at(static_cast<std::size_t>(om.p_ibr[i]));
        double a = x.at(static_cast<std::size_t>(om.alpha[i]));
        gap = std::max(gap, std::abs(w - p * a) * om.gc.base_mva);
    }
    return gap;
}

namespace {

// Activation pattern of the network at the relaxed point's inputs.
bool activation_guess(const OpfModel& om, const std::vector<double>& x, std::vector<double>& guess)
{
    VectorXd in(static_cast<Eigen::Index>(om.wiring.size()));
    for (std::size_t j = 0; j < om.wiring.size(); ++j) {
        const auto& w = om.wiring[j];
        in[static_cast<Eigen::Index>(j)] = w.var >= 0 ? w.scale * x[static_cast<std::size_t>(w.var)] : w.constant;
    }
    ForwardTrace t = forward_trace(om.predictor, in);
    for (std::size_t l = 0; l < om.net.binaries.size(); ++l)
        for (std::size_t i = 0; i < om.net.binaries[l].size(); ++i) {
            int b = om.net.binaries[l][i];
            if (b >= 0)
                guess[static_cast<std::size_t>(b)] = t.pre[l][static_cast<Eigen::Index>(i)] > 0.0 ? 1.0 : 0.0;
        }
    return true;
}

Solution run(const OpfModel& om, const OptModel& m, double time_limit, double rel_gap)
{
    if (m.num_binaries() > 0) {
        MilpOptions mo;
        mo.time_limit_s = time_limit;
        mo.rel_gap = rel_gap;
        if (om.kind == ModelKind::DLFCOPF && !om.wiring.empty())
            mo.heuristic = [&om](const std::vector<double>& x, std::vector<double>& g) {
                return activation_guess(om, x, g);
            };
        return solve_milp(m, mo);
    }
    LpOptions lp;
    lp.time_limit_s = time_limit;
    return solve_lp(m, lp);
}

double max_available_mw(const GridCase& gc)
{
    double v = 0.0;
    for (const auto& r : gc.ibrs)
        v = std::max(v, r.p_available_max_mw);
    return v;
}

LimitDiagnostic diagnose(const OpfModel& om, double time_limit, double rel_gap)
{
    OptModel m = om.model;
    m.clear_objective();
    int sr = m.add_var("slack_rocof", 0.0, kInf);
    int sn = m.add_var("slack_nadir", 0.0, kInf);
    if (om.rocof_row >= 0)
        m.replace_constraint(om.rocof_row, {{om.out_rocof, 1.0}, {sr, 1.0}}, Sense::Ge, om.limits.rocof_limit_hz_per_s);
    if (om.nadir_row >= 0)
        m.replace_constraint(om.nadir_row, {{om.out_nadir, 1.0}, {sn, 1.0}}, Sense::Ge, om.limits.nadir_limit_hz);
    m.add_objective(sr, 1.0);
    m.add_objective(sn, 1.0);
    Solution s = run(om, m, time_limit, rel_gap);
    LimitDiagnostic d;
    d.status = s.status;
    if (!s.values.empty()) {
        d.rocof_violation_hz_s = s.values[static_cast<std::size_t>(sr)];
        d.nadir_violation_hz = s.values[static_cast<std::size_t>(sn)];
    }
    return d;
}

/// BPWL solve that first finds an incumbent from the activation heuristic, then re-tightens the
/// neuron bounds with the objective capped at that incumbent before branching.
Solution run_with_cutoff(const OpfModel& om, double time_limit, double rel_gap)
{
    auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
    auto finish = [&](Solution s) {
        if (s.values.size() > static_cast<std::size_t>(om.model.num_vars()))
            s.values.resize(static_cast<std::size_t>(om.model.num_vars()));
        s.solve_time_s = elapsed();
        return s;
    };

    OptModel m = om.model.lowered();
    LpOptions lp;
    lp.time_limit_s = time_limit;
    Solution relax = solve_lp(m, lp);
    std::vector<double> guess(static_cast<std::size_t>(m.num_vars()), -1.0);
    if (relax.status != SolveStatus::Optimal || !activation_guess(om, relax.values, guess))
        return finish(run(om, om.model, std::max(0.0, time_limit - elapsed()), rel_gap));

    OptModel pinned = m;
    for (int j = 0; j < m.num_vars(); ++j) {
        if (!m.var(j).binary || m.var(j).lo == m.var(j).hi)
            continue;
        double g = guess[static_cast<std::size_t>(j)];
        if (g < 0.0)
            return finish(run(om, om.model, std::max(0.0, time_limit - elapsed()), rel_gap));
        pinned.set_bounds(j, g, g);
    }
    lp.time_limit_s = std::max(0.0, time_limit - elapsed());
    Solution inc = solve_lp(pinned, lp);
    if (inc.status != SolveStatus::Optimal)
        return finish(run(om, om.model, std::max(0.0, time_limit - elapsed()), rel_gap));

    std::vector<LinTerm> cost;
    for (int j = 0; j < m.num_vars(); ++j)
        if (double c = m.objective()[static_cast<std::size_t>(j)]; c != 0.0)
            cost.push_back({j, c});
    double cap = inc.objective + 1e-6 * std::max(1.0, std::abs(inc.objective));
    m.add_constraint("objective_cutoff", std::move(cost), Sense::Le, cap - m.objective_constant());
    EmbeddedNetwork e = om.net;
    tighten_neuron_bounds(m, e);

    Solution s = run(om, m, std::max(0.0, time_limit - elapsed()), rel_gap);
    if (s.values.empty() && s.status != SolveStatus::TimeLimit)
        s = run(om, om.model, std::max(0.0, time_limit - elapsed()), rel_gap);
    return finish(std::move(s));
}

}  // namespace

OpfResult solve_opf(OpfModel& om, const SolveConfig& cfg)
{
    om.model.validate();
    OpfResult r;
    const bool cutoff = cfg.cutoff_tightening && om.kind == ModelKind::DLFCOPF &&
                        om.encoding.kind == EncodingKind::BPWL && om.model.num_binaries() > 0 && !om.wiring.empty();
    r.solution = cutoff ? run_with_cutoff(om, cfg.time_limit_s, cfg.mip_rel_gap)
                        : run(om, om.model, cfg.time_limit_s, cfg.mip_rel_gap);
    auto has_point = [](const Solution& s) {
        return s.status == SolveStatus::Optimal || (s.status == SolveStatus::TimeLimit && !s.values.empty());
    };

    if (om.kind == ModelKind::DLFCOPF && has_point(r.solution)) {
        const double tol = cfg.mccormick_tol_frac * max_available_mw(om.gc);
        r.mccormick_gap_mw = mccormick_gap_mw(om, r.solution.values);
        while (cfg.refine_mccormick && r.mccormick_gap_mw > tol && r.refinements < cfg.max_refinements) {
            auto saved = om.alpha_box;
            for (std::size_t i = 0; i < om.alpha.size(); ++i) {
                const auto& x = r.solution.values;
                double w = x[static_cast<std::size_t>(om.p_gfm[i])];
                double p = x[static_cast<std::size_t>(om.p_ibr[i])];
                double a = x[static_cast<std::size_t>(om.alpha[i])];
                if (std::abs(w - p * a) * om.gc.base_mva <= tol)
                    continue;
                auto [lo, hi] = om.alpha_box[i];
                double mid = 0.5 * (lo + hi);
                if (a <= mid)
                    set_alpha_box(om, i, lo, mid);
                else
                    set_alpha_box(om, i, mid, hi);
            }
            Solution s = run(om, om.model, cfg.time_limit_s, cfg.mip_rel_gap);
            ++r.refinements;
            if (!has_point(s)) {
                for (std::size_t i = 0; i < saved.size(); ++i)
                    set_alpha_box(om, i, saved[i].first, saved[i].second);
                break;
            }
            r.solution = std::move(s);
            r.mccormick_gap_mw = mccormick_gap_mw(om, r.solution.values);
        }
        r.mccormick_ok = r.mccormick_gap_mw <= tol;
        r.linearization_error = linearization_error(om.net, r.solution.values);
    }

    if (has_point(r.solution)) {
        r.dispatch = extract_dispatch(om, r.solution, true);
    } else if (r.solution.status == SolveStatus::Infeasible && om.kind == ModelKind::DLFCOPF &&
               cfg.diagnose_infeasible && (om.rocof_row >= 0 || om.nadir_row >= 0)) {
        r.diagnostic = diagnose(om, cfg.time_limit_s, cfg.mip_rel_gap);
    }
    return r;
}

std::string dispatch_to_json(const Dispatch& d, const OpfModel& om, const OpfResult& r)
{
    nlohmann::json j;
    j["model"] = model_name(om.kind);
    j["status"] = status_name(r.solution.status);
    j["objective"] = r.solution.objective;
    j["total_cost"] = d.total_cost;
    j["solve_time_s"] = d.solve_time_s;
    j["node_count"] = r.solution.node_count;
    j["mip_gap"] = std::isfinite(r.solution.gap) ? nlohmann::json(r.solution.gap) : nlohmann::json(nullptr);
    double pwl = 0.0;
    for (double e : om.pwl_error_bound)
        pwl += e;
    j["pwl_error_bound"] = pwl;
    if (om.contingency)
        j["contingency"] = {{"outaged_gen_id", om.contingency->outaged_gen_id},
                            {"event_time_s", om.contingency->event_time_s}};
    if (om.kind != ModelKind::TOPF) {
        auto lim = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
        j["limits"] = {{"rocof_hz_s", lim(om.limits.rocof_limit_hz_per_s)}, {"nadir_hz", lim(om.limits.nadir_limit_hz)}};
    }
    if (om.kind == ModelKind::DLFCOPF) {
        j["encoding"] = encoding_name(om.encoding.kind);
        j["penalty"] = om.encoding.kind == EncodingKind::PCTAR || om.encoding.kind == EncodingKind::PCAR
                           ? nlohmann::json(om.encoding.penalty)
                           : nlohmann::json(nullptr);
        j["binaries"] = om.net.binary_count;
        j["mccormick_gap_mw"] = r.mccormick_gap_mw;
        j["mccormick_ok"] = r.mccormick_ok;
        j["linearization_error"] = r.linearization_error;
    }
    auto& g = j["generators"];
    g = nlohmann::json::array();
    for (std::size_t k = 0; k < d.gen_ids.size(); ++k)
        g.push_back({{"id", d.gen_ids[k]}, {"p_mw", d.p_gen_mw[k]}});
    auto& ib = j["ibrs"];
    ib = nlohmann::json::array();
    for (std::size_t i = 0; i < d.ibr_ids.size(); ++i)
        ib.push_back({{"id", d.ibr_ids[i]},
                      {"p_mw", d.p_ibr_mw[i]},
                      {"p_gfm_mw", d.p_gfm_mw[i]},
                      {"p_gfl_mw", d.p_gfl_mw[i]},
                      {"alpha", d.alpha[i]},
                      {"headroom_mw", d.headroom_mw[i]}});
    auto& bu = j["buses"];
    bu = nlohmann::json::array();
    for (std::size_t b = 0; b < d.bus_ids.size(); ++b)
        bu.push_back({{"id", d.bus_ids[b]}, {"angle_rad", d.angle_rad[b]}});
    auto& li = j["lines"];
    li = nlohmann::json::array();
    for (std::size_t k = 0; k < d.line_ids.size(); ++k)
        li.push_back({{"id", d.line_ids[k]}, {"flow_mw", d.flow_mw[k]}});
    if (d.predicted_rocof_hz_s)
        j["predicted"]["rocof_hz_s"] = *d.predicted_rocof_hz_s;
    if (d.predicted_nadir_hz)
        j["predicted"]["nadir_hz"] = *d.predicted_nadir_hz;
    if (!d.predicted_headroom_mw.empty())
        j["predicted"]["headroom_mw"] = d.predicted_headroom_mw;
    if (r.diagnostic)
        j["diagnostic"] = {{"rocof_violation_hz_s", r.diagnostic->rocof_violation_hz_s},
                           {"nadir_violation_hz", r.diagnostic->nadir_violation_hz}};
    return j.dump(2);
}

}  // namespace freqopf
