#include "freqopf/freq_sim.hpp"

#include "freqopf/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace freqopf {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kBalanceTolPu = 1e-6;

// Kron-reduced DC network for one set of connected machines.
struct ReducedNetwork {
    std::vector<int> gens;  // indices into case gens, in network order
    MatrixXd Y;             // Pe = Y*delta + M*P_bus
    MatrixXd M;
    MatrixXd W;             // bus frequency = W * rotor frequency
};

ReducedNetwork reduce_network(const GridCase& gc, const std::vector<bool>& connected, double xd_pu)
{
    ReducedNetwork net;
    for (std::size_t g = 0; g < gc.gens.size(); ++g)
        if (connected[g])
            net.gens.push_back(static_cast<int>(g));
    const auto nb = static_cast<Eigen::Index>(gc.buses.size());
    const auto ng = static_cast<Eigen::Index>(net.gens.size());
    if (ng == 0)
        throw Error(Errc::EmptySystem, "no synchronous machine connected");

    MatrixXd Bnn = MatrixXd::Zero(nb, nb);
    MatrixXd Bng = MatrixXd::Zero(nb, ng);
    VectorXd Bgg = VectorXd::Zero(ng);
    for (const auto& l : gc.lines) {
        int i = gc.bus_index(l.from_bus);
        int j = gc.bus_index(l.to_bus);
        double b = 1.0 / l.reactance_pu;
        Bnn(i, i) += b;
        Bnn(j, j) += b;
        Bnn(i, j) -= b;
        Bnn(j, i) -= b;
    }
    for (Eigen::Index k = 0; k < ng; ++k) {
        const auto& g = gc.gens[static_cast<std::size_t>(net.gens[static_cast<std::size_t>(k)])];
        double b = g.rating_mva / (xd_pu * gc.base_mva);
        int i = gc.bus_index(g.bus);
        Bnn(i, i) += b;
        Bng(i, k) -= b;
        Bgg(k) += b;
    }
    Eigen::PartialPivLU<MatrixXd> lu(Bnn);
    MatrixXd inv_Bng = lu.solve(Bng);                      // Bnn^-1 Bng
    MatrixXd Bgn = Bng.transpose();
    net.Y = MatrixXd(Bgg.asDiagonal()) - Bgn * inv_Bng;
    net.M = lu.solve(Bgn.transpose()).transpose();          // Bgn Bnn^-1 (Bnn symmetric)
    net.W = -inv_Bng;
    return net;
}

struct Model {
    const GridCase& gc;
    const SimConfig& cfg;
    std::size_t ng = 0;
    std::size_t ni = 0;
    double f0 = 60.0;

    std::vector<double> p_ref;        // pu
    std::vector<double> p_max;        // pu
    std::vector<double> m_coef;       // 2 H S / Sb
    std::vector<double> gen_base;     // S / Sb
    std::vector<double> gfm_p0;       // pu
    std::vector<double> gfm_cap;      // pu, P0 + reserved headroom
    std::vector<double> gfm_gain;     // alpha * p_avail / Sb
    std::vector<double> bus_inj;      // constant part: -load + gfl, pu
    std::vector<int> ibr_bus;         // bus index per IBR

    ReducedNetwork pre;
    ReducedNetwork post;
    int outaged = -1;                 // case gen index
    bool outaged_connected_post = false;
    std::vector<double> c_pre, c_post;  // M * bus_inj
    MatrixXd Mi_pre, Mi_post;           // M columns at IBR buses

    // State layout offsets.
    std::size_t o_delta = 0, o_freq = 0, o_pm = 0, o_xf = 0, o_p = 0, n = 0;

    Model(const GridCase& g, const Dispatch& d, const SimConfig& c)
        : gc(g)
        , cfg(c)
    {
        ng = gc.gens.size();
        ni = gc.ibrs.size();
        f0 = gc.base_freq_hz;
        if (d.p_gen_mw.size() != ng || d.p_ibr_mw.size() != ni || d.p_gfm_mw.size() != ni ||
            d.p_gfl_mw.size() != ni || d.alpha.size() != ni)
            throw Error(Errc::DimensionMismatch, "dispatch does not match case dimensions");

        double sb = gc.base_mva;
        double balance = -gc.total_load_mw();
        for (std::size_t k = 0; k < ng; ++k) {
            const auto& sg = gc.gens[k];
            p_ref.push_back(d.p_gen_mw[k] / sb);
            p_max.push_back(sg.p_max_mw / sb);
            gen_base.push_back(sg.rating_mva / sb);
            m_coef.push_back(2.0 * sg.inertia_h_s * cfg.inertia_scale * sg.rating_mva / sb);
            balance += d.p_gen_mw[k];
        }
        bus_inj.assign(gc.buses.size(), 0.0);
        for (std::size_t b = 0; b < gc.buses.size(); ++b)
            bus_inj[b] = -gc.buses[b].load_mw / sb;
        for (std::size_t i = 0; i < ni; ++i) {
            const auto& ip = gc.ibrs[i];
            double reserve = std::max(0.0, ip.p_available_max_mw - d.p_ibr_mw[i]);
            gfm_p0.push_back(d.p_gfm_mw[i] / sb);
            gfm_cap.push_back((d.p_gfm_mw[i] + reserve) / sb);
            double share = cfg.gfm_enabled ? std::clamp(d.alpha[i], 0.0, 1.0) : 0.0;
            gfm_gain.push_back(share * ip.p_available_max_mw / sb);
            int b = gc.bus_index(ip.bus);
            ibr_bus.push_back(b);
            bus_inj[static_cast<std::size_t>(b)] += d.p_gfl_mw[i] / sb;
            balance += d.p_gfm_mw[i] + d.p_gfl_mw[i];
        }
        if (std::abs(balance / sb) > kBalanceTolPu)
            throw Error(Errc::Unbalanced, "generation minus load = " + std::to_string(balance) + " MW");

        std::vector<bool> connected(ng, true);
        pre = reduce_network(gc, connected, cfg.transient_reactance_pu);
        if (cfg.event) {
            check_contingency(gc, *cfg.event);
            outaged = gc.gen_index(cfg.event->outaged_gen_id);
            outaged_connected_post = cfg.include_outaged_inertia;
            if (!outaged_connected_post)
                connected[static_cast<std::size_t>(outaged)] = false;
            post = reduce_network(gc, connected, cfg.transient_reactance_pu);
        } else {
            post = pre;
        }
        auto prep = [&](const ReducedNetwork& net, std::vector<double>& cvec, MatrixXd& Mi) {
            Eigen::Map<const VectorXd> inj(bus_inj.data(), static_cast<Eigen::Index>(bus_inj.size()));
            VectorXd cv = net.M * inj;
            cvec.assign(cv.data(), cv.data() + cv.size());
            Mi.resize(net.M.rows(), static_cast<Eigen::Index>(ni));
            for (std::size_t i = 0; i < ni; ++i)
                Mi.col(static_cast<Eigen::Index>(i)) = net.M.col(ibr_bus[i]);
        };
        prep(pre, c_pre, Mi_pre);
        prep(post, c_post, Mi_post);

        o_delta = 0;
        o_freq = ng;
        o_pm = 2 * ng;
        o_xf = 3 * ng;
        o_p = 3 * ng + ni;
        n = 3 * ng + 2 * ni;
    }

    bool in_coi(std::size_t g, bool post_event) const
    {
        if (!post_event || static_cast<int>(g) != outaged)
            return true;
        return cfg.include_outaged_inertia;
    }

    double coi(const VectorXd& x, bool post_event) const
    {
        double num = 0.0, den = 0.0;
        for (std::size_t g = 0; g < ng; ++g) {
            if (!in_coi(g, post_event))
                continue;
            num += m_coef[g] * x[static_cast<Eigen::Index>(o_freq + g)];
            den += m_coef[g];
        }
        return num / den;
    }

    double valve(const VectorXd& x, std::size_t g, bool post_event) const
    {
        if (post_event && static_cast<int>(g) == outaged)
            return 0.0;
        if (!cfg.governors_enabled)
            return p_ref[g];
        const auto& sg = gc.gens[g];
        double dev = (x[static_cast<Eigen::Index>(o_freq + g)] - f0) / f0;
        return std::clamp(p_ref[g] - gen_base[g] * dev / sg.governor_droop_pu, 0.0, p_max[g]);
    }

    void deriv(const VectorXd& x, bool post_event, VectorXd& dx) const
    {
        const ReducedNetwork& net = post_event ? post : pre;
        const auto& cvec = post_event ? c_post : c_pre;
        const MatrixXd& Mi = post_event ? Mi_post : Mi_pre;
        const auto k = static_cast<Eigen::Index>(net.gens.size());

        VectorXd delta(k), freq(k);
        for (Eigen::Index j = 0; j < k; ++j) {
            auto g = static_cast<std::size_t>(net.gens[static_cast<std::size_t>(j)]);
            delta[j] = x[static_cast<Eigen::Index>(o_delta + g)];
            freq[j] = x[static_cast<Eigen::Index>(o_freq + g)];
        }
        VectorXd pgfm = x.segment(static_cast<Eigen::Index>(o_p), static_cast<Eigen::Index>(ni));
        VectorXd pe = net.Y * delta + Mi * pgfm;
        for (Eigen::Index j = 0; j < k; ++j)
            pe[j] += cvec[static_cast<std::size_t>(j)];

        double fcoi = coi(x, post_event);
        dx.setZero(static_cast<Eigen::Index>(n));
        for (Eigen::Index j = 0; j < k; ++j) {
            auto g = static_cast<std::size_t>(net.gens[static_cast<std::size_t>(j)]);
            auto ig = static_cast<Eigen::Index>(g);
            double f = x[static_cast<Eigen::Index>(o_freq) + ig];
            double pm = x[static_cast<Eigen::Index>(o_pm) + ig];
            double damping = cfg.intermachine_damping * m_coef[g] * (f - fcoi) / f0;
            dx[static_cast<Eigen::Index>(o_delta) + ig] = 2.0 * std::numbers::pi * (f - f0);
            dx[static_cast<Eigen::Index>(o_freq) + ig] = f0 * (pm - pe[j] - damping) / m_coef[g];
            if (post_event && static_cast<int>(g) == outaged)
                continue;  // prime mover lost; Pm held at zero
            dx[static_cast<Eigen::Index>(o_pm) + ig] = (valve(x, g, post_event) - pm) / gc.gens[g].turbine_time_const_s;
        }

        for (std::size_t i = 0; i < ni; ++i) {
            const auto& ip = gc.ibrs[i];
            auto ii = static_cast<Eigen::Index>(i);
            double fbus = net.W.row(ibr_bus[i]).dot(freq);
            double xf = x[static_cast<Eigen::Index>(o_xf) + ii];
            double p = x[static_cast<Eigen::Index>(o_p) + ii];
            double tf = cfg.gfm_measurement_filter_s;
            double rate = (fbus - xf) / tf;
            dx[static_cast<Eigen::Index>(o_xf) + ii] = rate;
            double cmd = gfm_p0[i] +
                         gfm_gain[i] * ((f0 - xf) / (f0 * ip.gfm_droop_pu) - 2.0 * ip.gfm_virtual_inertia_s * rate / f0);
            cmd = std::clamp(cmd, 0.0, gfm_cap[i]);
            dx[static_cast<Eigen::Index>(o_p) + ii] = (cmd - p) / ip.gfm_response_time_const_s;
        }
    }

    VectorXd initial_state() const
    {
        VectorXd x = VectorXd::Zero(static_cast<Eigen::Index>(n));
        const auto k = static_cast<Eigen::Index>(ng);
        // Solve Y*delta = P_ref - c - Mi*P_gfm0 with delta_0 = 0.
        VectorXd rhs(k);
        Eigen::Map<const VectorXd> p0(gfm_p0.data(), static_cast<Eigen::Index>(ni));
        VectorXd base = pre.Y.cols() > 0 ? VectorXd(Mi_pre * p0) : VectorXd::Zero(k);
        for (Eigen::Index j = 0; j < k; ++j)
            rhs[j] = p_ref[static_cast<std::size_t>(j)] - c_pre[static_cast<std::size_t>(j)] - base[j];
        VectorXd delta = VectorXd::Zero(k);
        if (k > 1) {
            MatrixXd Yr = pre.Y.bottomRightCorner(k - 1, k - 1);
            delta.tail(k - 1) = Yr.partialPivLu().solve(rhs.tail(k - 1));
        }
        for (std::size_t g = 0; g < ng; ++g) {
            x[static_cast<Eigen::Index>(o_delta + g)] = delta[static_cast<Eigen::Index>(g)];
            x[static_cast<Eigen::Index>(o_freq + g)] = f0;
            x[static_cast<Eigen::Index>(o_pm + g)] = p_ref[g];
        }
        for (std::size_t i = 0; i < ni; ++i) {
            x[static_cast<Eigen::Index>(o_xf + i)] = f0;
            x[static_cast<Eigen::Index>(o_p + i)] = gfm_p0[i];
        }
        return x;
    }

    SimState to_state(const VectorXd& x, double t, bool post_event) const
    {
        SimState s;
        s.time_s = t;
        for (std::size_t g = 0; g < ng; ++g) {
            s.rotor_angle_rad.push_back(x[static_cast<Eigen::Index>(o_delta + g)]);
            s.rotor_freq_hz.push_back(x[static_cast<Eigen::Index>(o_freq + g)]);
            s.mech_power_pu.push_back(x[static_cast<Eigen::Index>(o_pm + g)]);
            s.valve_pu.push_back(valve(x, g, post_event));
        }
        for (std::size_t i = 0; i < ni; ++i) {
            s.gfm_freq_state_hz.push_back(x[static_cast<Eigen::Index>(o_xf + i)]);
            s.gfm_power_pu.push_back(x[static_cast<Eigen::Index>(o_p + i)]);
        }
        return s;
    }

    VectorXd from_state(const SimState& s) const
    {
        VectorXd x(static_cast<Eigen::Index>(n));
        if (s.rotor_freq_hz.size() != ng || s.gfm_power_pu.size() != ni)
            throw Error(Errc::DimensionMismatch, "state does not match case");
        for (std::size_t g = 0; g < ng; ++g) {
            x[static_cast<Eigen::Index>(o_delta + g)] = s.rotor_angle_rad[g];
            x[static_cast<Eigen::Index>(o_freq + g)] = s.rotor_freq_hz[g];
            x[static_cast<Eigen::Index>(o_pm + g)] = s.mech_power_pu[g];
        }
        for (std::size_t i = 0; i < ni; ++i) {
            x[static_cast<Eigen::Index>(o_xf + i)] = s.gfm_freq_state_hz[i];
            x[static_cast<Eigen::Index>(o_p + i)] = s.gfm_power_pu[i];
        }
        return x;
    }
};

}  // namespace

SimState steady_state_init(const GridCase& gc, const Dispatch& d, const SimConfig& cfg)
{
    SimConfig quiet = cfg;
    quiet.event.reset();
    Model m(gc, d, quiet);
    return m.to_state(m.initial_state(), 0.0, false);
}

double max_state_derivative(const GridCase& gc, const Dispatch& d, const SimState& s, const SimConfig& cfg)
{
    SimConfig quiet = cfg;
    quiet.event.reset();
    Model m(gc, d, quiet);
    VectorXd x = m.from_state(s);
    VectorXd dx;
    m.deriv(x, false, dx);
    return dx.size() ? dx.cwiseAbs().maxCoeff() : 0.0;
}

SimResult simulate(const GridCase& gc, const Dispatch& d, const SimConfig& cfg)
{
    if (!(cfg.dt_s > 0.0) || !(cfg.rocof_window_s > 0.0) || cfg.dt_s > cfg.rocof_window_s / 10.0 + 1e-15)
        throw Error(Errc::InvalidConfig, "dt must be positive and at most rocof_window/10");
    if (cfg.event && !(cfg.event->event_time_s < cfg.t_end_s))
        throw Error(Errc::InvalidConfig, "event time must precede t_end");

    Model m(gc, d, cfg);
    const double dt = cfg.dt_s;
    const auto steps = static_cast<std::size_t>(std::llround(cfg.t_end_s / dt));
    const std::size_t event_step =
        cfg.event ? static_cast<std::size_t>(std::llround(cfg.event->event_time_s / dt)) : steps + 1;

    SimResult res;
    for (const auto& g : gc.gens)
        res.gen_ids.push_back(g.id);
    for (const auto& p : gc.ibrs)
        res.ibr_ids.push_back(p.id);
    Trajectory& tr = res.trajectory;
    tr.t_s.reserve(steps + 1);
    tr.f_coi_hz.reserve(steps + 1);
    tr.f_gen_hz.assign(m.ng, {});
    tr.p_gfm_mw.assign(m.ni, {});
    for (auto& v : tr.f_gen_hz)
        v.reserve(steps + 1);
    for (auto& v : tr.p_gfm_mw)
        v.reserve(steps + 1);

    const double sb = gc.base_mva;
    auto record = [&](const VectorXd& x, double t, bool post_event) {
        tr.t_s.push_back(t);
        tr.f_coi_hz.push_back(m.coi(x, post_event));
        for (std::size_t g = 0; g < m.ng; ++g)
            tr.f_gen_hz[g].push_back(x[static_cast<Eigen::Index>(m.o_freq + g)]);
        for (std::size_t i = 0; i < m.ni; ++i)
            tr.p_gfm_mw[i].push_back(x[static_cast<Eigen::Index>(m.o_p + i)] * sb);
    };

    VectorXd x = m.initial_state();
    VectorXd k1, k2, k3, k4;
    record(x, 0.0, false);
    for (std::size_t s = 0; s < steps; ++s) {
        bool post_event = s >= event_step;
        if (s == event_step && m.outaged >= 0)
            x[static_cast<Eigen::Index>(m.o_pm + static_cast<std::size_t>(m.outaged))] = 0.0;
        m.deriv(x, post_event, k1);
        m.deriv(x + 0.5 * dt * k1, post_event, k2);
        m.deriv(x + 0.5 * dt * k2, post_event, k3);
        m.deriv(x + dt * k3, post_event, k4);
        x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        for (std::size_t i = 0; i < m.ni; ++i) {
            auto idx = static_cast<Eigen::Index>(m.o_p + i);
            x[idx] = std::clamp(x[idx], 0.0, m.gfm_cap[i]);
        }
        double t = static_cast<double>(s + 1) * dt;
        if (!x.allFinite()) {
            std::ostringstream os;
            os << "state became non-finite at t = " << t << " s";
            throw Error(Errc::NumericalDivergence, os.str());
        }
        record(x, t, post_event || s + 1 > event_step);
    }

    FreqMetrics& mt = res.metrics;
    mt.worst_rocof_hz_per_s = worst_rocof(tr.t_s, tr.f_coi_hz, cfg.rocof_window_s);
    mt.nadir_hz = frequency_nadir(tr.f_coi_hz);
    double t_event = cfg.event ? cfg.event->event_time_s : 0.0;
    for (std::size_t i = 0; i < m.ni; ++i)
        mt.headroom_used_mw.push_back(gfm_headroom_used(tr.t_s, tr.p_gfm_mw[i], d.p_gfm_mw[i], t_event));

    double max_rate = 0.0;
    double t_settle = tr.t_s.back() - cfg.settle_window_s;
    for (std::size_t s = 1; s < tr.t_s.size(); ++s) {
        if (tr.t_s[s - 1] < t_settle)
            continue;
        max_rate = std::max(max_rate, std::abs(tr.f_coi_hz[s] - tr.f_coi_hz[s - 1]) / (tr.t_s[s] - tr.t_s[s - 1]));
    }
    mt.settled = max_rate < cfg.settle_tol_hz_s;
    return res;
}

double coi_frequency(std::span<const double> freqs_hz, std::span<const double> inertias_mws)
{
    if (freqs_hz.empty() || freqs_hz.size() != inertias_mws.size())
        throw Error(Errc::EmptySystem, "no generator online");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < freqs_hz.size(); ++i) {
        if (!(inertias_mws[i] > 0.0))
            throw Error(Errc::EmptySystem, "inertia must be positive");
        num += freqs_hz[i] * inertias_mws[i];
        den += inertias_mws[i];
    }
    return num / den;
}

double worst_rocof(std::span<const double> t_s, std::span<const double> f_hz, double window_s)
{
    if (t_s.size() != f_hz.size() || t_s.size() < 2 || t_s.back() - t_s.front() < window_s - 1e-12)
        throw Error(Errc::TooShort, "trajectory shorter than the RoCoF window");
    double worst = 0.0;
    bool any = false;
    std::size_t j = 0;
    for (std::size_t i = 0; i < t_s.size(); ++i) {
        j = std::max(j, i + 1);
        while (j < t_s.size() && t_s[j] - t_s[i] < window_s - 1e-9)
            ++j;
        if (j >= t_s.size())
            break;
        double r = (f_hz[j] - f_hz[i]) / (t_s[j] - t_s[i]);
        if (!any || r < worst) {
            worst = r;
            any = true;
        }
    }
    return worst;
}

double frequency_nadir(std::span<const double> f_hz)
{
    if (f_hz.empty())
        throw Error(Errc::Empty, "empty trajectory");
    return *std::min_element(f_hz.begin(), f_hz.end());
}

double gfm_headroom_used(std::span<const double> t_s, std::span<const double> p_mw, double pre_event_mw,
                         double event_time_s)
{
    if (p_mw.empty() || t_s.size() != p_mw.size())
        throw Error(Errc::Empty, "empty trajectory");
    double used = 0.0;
    for (std::size_t i = 0; i < p_mw.size(); ++i)
        if (t_s[i] >= event_time_s)
            used = std::max(used, p_mw[i] - pre_event_mw);
    return used;
}

void write_trajectory_csv(const SimResult& r, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out)
        throw Error(Errc::IoError, "cannot write " + path.string());
    out << "t_s,f_coi_hz";
    for (int id : r.gen_ids)
        out << ",f_g_" << id;
    for (int id : r.ibr_ids)
        out << ",p_gfm_" << id;
    out << "\n" << std::setprecision(12);
    const auto& tr = r.trajectory;
    for (std::size_t s = 0; s < tr.t_s.size(); ++s) {
        out << tr.t_s[s] << "," << tr.f_coi_hz[s];
        for (const auto& v : tr.f_gen_hz)
            out << "," << v[s];
        for (const auto& v : tr.p_gfm_mw)
            out << "," << v[s];
        out << "\n";
    }
}

Dispatch make_dispatch(const GridCase& gc, std::vector<double> p_gen_mw, std::vector<double> p_ibr_mw,
                       std::vector<double> alpha)
{
    Dispatch d;
    for (const auto& g : gc.gens)
        d.gen_ids.push_back(g.id);
    for (const auto& p : gc.ibrs)
        d.ibr_ids.push_back(p.id);
    d.p_gen_mw = std::move(p_gen_mw);
    d.p_ibr_mw = std::move(p_ibr_mw);
    d.alpha = std::move(alpha);
    if (d.p_ibr_mw.size() != gc.ibrs.size() || d.alpha.size() != gc.ibrs.size() || d.p_gen_mw.size() != gc.gens.size())
        throw Error(Errc::DimensionMismatch, "dispatch vectors do not match case");
    for (std::size_t i = 0; i < gc.ibrs.size(); ++i) {
        d.p_gfm_mw.push_back(d.alpha[i] * d.p_ibr_mw[i]);
        d.p_gfl_mw.push_back(d.p_ibr_mw[i] - d.p_gfm_mw.back());
        d.headroom_mw.push_back(gc.ibrs[i].p_available_max_mw - d.p_ibr_mw[i]);
    }
    return d;
}

}  // namespace freqopf
