#include "freqopf/neural_predictor.hpp"

#include "freqopf/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace freqopf {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

constexpr int kWeightsVersion = 1;
constexpr double kKinkThreshold = 1e-4;

double relu(double v) { return v > 0.0 ? v : 0.0; }

void check_dims(const std::vector<int>& dims)
{
    if (dims.size() < 2)
        throw Error(Errc::ArchMismatch, "need at least input and output dimensions");
    for (int d : dims)
        if (d < 1)
            throw Error(Errc::ArchMismatch, "layer dimensions must be positive");
}

// Uniform in [0,1) from the top 53 bits.
double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double normal_draw(std::mt19937_64& rng)
{
    double u1 = unit_draw(rng), u2 = unit_draw(rng);
    if (u1 < 1e-300)
        u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

void shuffle(std::vector<int>& idx, std::mt19937_64& rng)
{
    for (std::size_t i = idx.size(); i > 1; --i) {
        auto j = static_cast<std::size_t>(rng() % i);
        std::swap(idx[i - 1], idx[j]);
    }
}

}  // namespace

Normalizer Normalizer::identity(int dim)
{
    return {VectorXd::Zero(dim), VectorXd::Ones(dim)};
}

Normalizer Normalizer::fit(const MatrixXd& rows)
{
    Normalizer n;
    n.mean = rows.colwise().mean().transpose();
    n.stddev.resize(rows.cols());
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
        double var = (rows.col(j).array() - n.mean[j]).square().mean();
        double sd = std::sqrt(var);
        n.stddev[j] = sd > 1e-12 * (1.0 + std::abs(n.mean[j])) ? sd : 1.0;
    }
    return n;
}

MlpNet MlpNet::zeros(std::vector<int> dims)
{
    check_dims(dims);
    MlpNet net;
    net.layer_dims = std::move(dims);
    for (std::size_t m = 0; m + 1 < net.layer_dims.size(); ++m) {
        net.weights.push_back(MatrixXd::Zero(net.layer_dims[m + 1], net.layer_dims[m]));
        net.biases.push_back(VectorXd::Zero(net.layer_dims[m + 1]));
    }
    net.input_norm = Normalizer::identity(net.input_dim());
    net.output_norm = Normalizer::identity(net.output_dim());
    return net;
}

MlpNet MlpNet::random(std::vector<int> dims, std::uint64_t seed)
{
    MlpNet net = zeros(std::move(dims));
    std::mt19937_64 rng(seed);
    for (auto& W : net.weights) {
        double scale = std::sqrt(2.0 / static_cast<double>(W.cols()));
        for (Eigen::Index i = 0; i < W.rows(); ++i)
            for (Eigen::Index j = 0; j < W.cols(); ++j)
                W(i, j) = scale * normal_draw(rng);
    }
    return net;
}

void MlpNet::check() const
{
    check_dims(layer_dims);
    if (weights.size() + 1 != layer_dims.size() || biases.size() != weights.size())
        throw Error(Errc::ArchMismatch, "layer count does not match layer_dims");
    for (std::size_t m = 0; m < weights.size(); ++m) {
        if (weights[m].rows() != layer_dims[m + 1] || weights[m].cols() != layer_dims[m] ||
            biases[m].size() != layer_dims[m + 1])
            throw Error(Errc::ArchMismatch, "layer " + std::to_string(m) + " shape mismatch");
    }
    auto norm_ok = [](const Normalizer& n, int dim) {
        return n.mean.size() == dim && n.stddev.size() == dim && (n.stddev.array() > 0.0).all() &&
               n.mean.allFinite() && n.stddev.allFinite();
    };
    if (!norm_ok(input_norm, input_dim()) || !norm_ok(output_norm, output_dim()))
        throw Error(Errc::ArchMismatch, "normalizer shape or stddev invalid");
}

ForwardTrace forward_trace(const MlpNet& net, const VectorXd& x)
{
    if (x.size() != net.input_dim())
        throw Error(Errc::DimensionMismatch,
                    "input has " + std::to_string(x.size()) + " entries, net expects " + std::to_string(net.input_dim()));
    ForwardTrace t;
    VectorXd a = (x - net.input_norm.mean).cwiseQuotient(net.input_norm.stddev);
    std::size_t L = net.weights.size();
    for (std::size_t m = 0; m + 1 < L; ++m) {
        VectorXd pre = net.weights[m] * a + net.biases[m];
        a = pre.unaryExpr(&relu);
        t.pre.push_back(std::move(pre));
        t.post.push_back(a);
    }
    t.output_normalized = net.weights[L - 1] * a + net.biases[L - 1];
    t.output = net.output_norm.mean + net.output_norm.stddev.cwiseProduct(t.output_normalized);
    return t;
}

VectorXd forward(const MlpNet& net, const VectorXd& x)
{
    return forward_trace(net, x).output;
}

namespace {

struct Grads {
    std::vector<MatrixXd> dW;
    std::vector<VectorXd> db;
};

// Batch loss mean((O - T)^2) in normalized units; columns are samples.
double batch_loss_and_grad(const MlpNet& net, const MatrixXd& U, const MatrixXd& T, Grads* g)
{
    std::size_t L = net.weights.size();
    std::vector<MatrixXd> acts{U};
    std::vector<MatrixXd> pres;
    for (std::size_t m = 0; m < L; ++m) {
        MatrixXd pre = (net.weights[m] * acts.back()).colwise() + net.biases[m];
        if (m + 1 < L) {
            acts.push_back(pre.cwiseMax(0.0));
            pres.push_back(std::move(pre));
        } else {
            acts.push_back(std::move(pre));
        }
    }
    MatrixXd diff = acts.back() - T;
    double count = static_cast<double>(diff.size());
    double loss = diff.squaredNorm() / count;
    if (!g)
        return loss;
    g->dW.resize(L);
    g->db.resize(L);
    MatrixXd delta = (2.0 / count) * diff;
    for (std::size_t m = L; m-- > 0;) {
        g->dW[m] = delta * acts[m].transpose();
        g->db[m] = delta.rowwise().sum();
        if (m > 0) {
            MatrixXd back = net.weights[m].transpose() * delta;
            delta = back.cwiseProduct((pres[m - 1].array() > 0.0).cast<double>().matrix());
        }
    }
    return loss;
}

}  // namespace

std::pair<MlpNet, TrainReport> train(const MatrixXd& X, const MatrixXd& Y, std::vector<int> hidden,
                                     const TrainConfig& cfg)
{
    if (X.rows() == 0 || Y.rows() == 0)
        throw Error(Errc::EmptyDataset, "dataset has no samples");
    if (X.rows() != Y.rows())
        throw Error(Errc::DimensionMismatch, "feature and label row counts differ");
    if (cfg.epochs < 1)
        throw Error(Errc::InvalidConfig, "epochs must be >= 1");
    if (!(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0))
        throw Error(Errc::InvalidConfig, "validation fraction must lie in (0, 1)");
    if (cfg.batch_size < 1 || !(cfg.learning_rate > 0.0))
        throw Error(Errc::InvalidConfig, "batch size and learning rate must be positive");
    for (int h : hidden)
        if (h < 1)
            throw Error(Errc::ArchMismatch, "hidden layer widths must be positive");

    const auto n = static_cast<int>(X.rows());
    int n_val = static_cast<int>(std::lround(cfg.validation_fraction * n));
    n_val = std::clamp(n_val, n > 1 ? 1 : 0, n - 1);
    std::mt19937_64 rng(cfg.seed);
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    shuffle(idx, rng);
    std::vector<int> val_idx(idx.begin(), idx.begin() + n_val);
    std::vector<int> tr_idx(idx.begin() + n_val, idx.end());
    if (tr_idx.empty())
        throw Error(Errc::EmptyDataset, "training split is empty");

    auto gather = [](const MatrixXd& M, const std::vector<int>& rows) {
        MatrixXd out(static_cast<Eigen::Index>(rows.size()), M.cols());
        for (std::size_t i = 0; i < rows.size(); ++i)
            out.row(static_cast<Eigen::Index>(i)) = M.row(rows[i]);
        return out;
    };
    MatrixXd Xtr = gather(X, tr_idx), Ytr = gather(Y, tr_idx);
    MatrixXd Xva = gather(X, val_idx), Yva = gather(Y, val_idx);

    std::vector<int> dims{static_cast<int>(X.cols())};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(static_cast<int>(Y.cols()));
    MlpNet net = MlpNet::random(dims, rng());
    net.input_norm = Normalizer::fit(Xtr);
    net.output_norm = Normalizer::fit(Ytr);

    auto to_cols = [](const MatrixXd& M, const Normalizer& nz) {
        MatrixXd C = M.transpose();
        C.colwise() -= nz.mean;
        return MatrixXd(nz.stddev.cwiseInverse().asDiagonal() * C);
    };
    MatrixXd Utr = to_cols(Xtr, net.input_norm), Ttr = to_cols(Ytr, net.output_norm);
    MatrixXd Uva = to_cols(Xva, net.input_norm), Tva = to_cols(Yva, net.output_norm);
    bool have_val = Uva.cols() > 0;

    TrainReport rep;
    rep.train_size = static_cast<int>(tr_idx.size());
    rep.val_size = n_val;
    auto val_loss = [&](const MlpNet& m) { return have_val ? batch_loss_and_grad(m, Uva, Tva, nullptr) : 0.0; };
    rep.initial_val_loss = val_loss(net);
    double best = rep.initial_val_loss;
    MlpNet best_net = net;

    std::size_t L = net.weights.size();
    std::vector<MatrixXd> mW(L), vW(L);
    std::vector<VectorXd> mb(L), vb(L);
    for (std::size_t m = 0; m < L; ++m) {
        mW[m] = MatrixXd::Zero(net.weights[m].rows(), net.weights[m].cols());
        vW[m] = mW[m];
        mb[m] = VectorXd::Zero(net.biases[m].size());
        vb[m] = mb[m];
    }
    long step = 0;
    double lr = cfg.learning_rate;
    std::vector<int> order(tr_idx.size());
    std::iota(order.begin(), order.end(), 0);
    Grads g;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle(order, rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            auto B = static_cast<Eigen::Index>(stop - start);
            MatrixXd Ub(Utr.rows(), B), Tb(Ttr.rows(), B);
            for (Eigen::Index k = 0; k < B; ++k) {
                Ub.col(k) = Utr.col(order[start + static_cast<std::size_t>(k)]);
                Tb.col(k) = Ttr.col(order[start + static_cast<std::size_t>(k)]);
            }
            batch_loss_and_grad(net, Ub, Tb, &g);
            ++step;
            double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
            double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
            for (std::size_t m = 0; m < L; ++m) {
                mW[m] = cfg.beta1 * mW[m] + (1.0 - cfg.beta1) * g.dW[m];
                vW[m] = cfg.beta2 * vW[m] + (1.0 - cfg.beta2) * g.dW[m].cwiseAbs2();
                mb[m] = cfg.beta1 * mb[m] + (1.0 - cfg.beta1) * g.db[m];
                vb[m] = cfg.beta2 * vb[m] + (1.0 - cfg.beta2) * g.db[m].cwiseAbs2();
                net.weights[m].array() -=
                    lr * (mW[m].array() / c1) / ((vW[m].array() / c2).sqrt() + cfg.epsilon);
                net.biases[m].array() -= lr * (mb[m].array() / c1) / ((vb[m].array() / c2).sqrt() + cfg.epsilon);
            }
        }
        lr *= cfg.lr_decay;
        rep.train_loss.push_back(batch_loss_and_grad(net, Utr, Ttr, nullptr));
        double vl = val_loss(net);
        rep.val_loss.push_back(vl);
        if (!std::isfinite(rep.train_loss.back()))
            throw Error(Errc::NumericalDivergence, "training loss became non-finite");
        if (vl < best || !have_val) {
            best = vl;
            best_net = net;
            rep.best_epoch = epoch;
        }
    }

    rep.val_mse_per_label.assign(static_cast<std::size_t>(Y.cols()), 0.0);
    if (have_val) {
        for (Eigen::Index i = 0; i < Xva.rows(); ++i) {
            VectorXd y = forward(best_net, Xva.row(i).transpose());
            for (Eigen::Index k = 0; k < Y.cols(); ++k) {
                double e = y[k] - Yva(i, k);
                rep.val_mse_per_label[static_cast<std::size_t>(k)] += e * e / static_cast<double>(Xva.rows());
            }
        }
    }
    return {std::move(best_net), std::move(rep)};
}

double gradient_check(const MlpNet& net, const VectorXd& x, const VectorXd& target)
{
    net.check();
    ForwardTrace tr = forward_trace(net, x);
    for (const auto& pre : tr.pre)
        for (Eigen::Index i = 0; i < pre.size(); ++i)
            if (std::abs(pre[i]) < kKinkThreshold)
                throw Error(Errc::KinkProximity, "a pre-activation lies within 1e-4 of the ReLU kink");
    if (target.size() != net.output_dim())
        throw Error(Errc::DimensionMismatch, "target length does not match the output dimension");

    VectorXd u = (x - net.input_norm.mean).cwiseQuotient(net.input_norm.stddev);
    VectorXd t = (target - net.output_norm.mean).cwiseQuotient(net.output_norm.stddev);
    // batch_loss_and_grad uses mean squared error over k outputs; rescale to 0.5*||.||^2.
    double scale = 0.5 * static_cast<double>(net.output_dim());
    Grads g;
    batch_loss_and_grad(net, u, t, &g);
    auto loss = [&](const MlpNet& m) { return scale * batch_loss_and_grad(m, u, t, nullptr); };

    const double h = 1e-5;
    double worst = 0.0;
    MlpNet probe = net;
    auto compare = [&](double analytic, double& param) {
        double keep = param;
        param = keep + h;
        double fp = loss(probe);
        param = keep - h;
        double fm = loss(probe);
        param = keep;
        double numeric = (fp - fm) / (2.0 * h);
        double denom = std::max(std::abs(analytic), std::abs(numeric));
        if (denom < 1e-10)
            return;
        worst = std::max(worst, std::abs(analytic - numeric) / denom);
    };
    for (std::size_t m = 0; m < probe.weights.size(); ++m) {
        for (Eigen::Index i = 0; i < probe.weights[m].rows(); ++i)
            for (Eigen::Index j = 0; j < probe.weights[m].cols(); ++j)
                compare(scale * g.dW[m](i, j), probe.weights[m](i, j));
        for (Eigen::Index i = 0; i < probe.biases[m].size(); ++i)
            compare(scale * g.db[m][i], probe.biases[m][i]);
    }
    return worst;
}

NeuronBounds interval_bounds(const MlpNet& net, const VectorXd& box_lo, const VectorXd& box_hi)
{
    if (box_lo.size() != net.input_dim() || box_hi.size() != net.input_dim())
        throw Error(Errc::DimensionMismatch, "box dimension does not match the net input");
    for (Eigen::Index j = 0; j < box_lo.size(); ++j)
        if (!(box_lo[j] <= box_hi[j]))
            throw Error(Errc::EmptyBox, "box is empty in feature " + std::to_string(j));
    NeuronBounds nb;
    nb.box_lo = box_lo;
    nb.box_hi = box_hi;
    VectorXd lo = (box_lo - net.input_norm.mean).cwiseQuotient(net.input_norm.stddev);
    VectorXd hi = (box_hi - net.input_norm.mean).cwiseQuotient(net.input_norm.stddev);
    for (std::size_t m = 0; m + 1 < net.weights.size(); ++m) {
        MatrixXd Wp = net.weights[m].cwiseMax(0.0);
        MatrixXd Wn = net.weights[m].cwiseMin(0.0);
        VectorXd plo = Wp * lo + Wn * hi + net.biases[m];
        VectorXd phi = Wp * hi + Wn * lo + net.biases[m];
        nb.lo.push_back(plo);
        nb.hi.push_back(phi);
        lo = plo.cwiseMax(0.0);
        hi = phi.cwiseMax(0.0);
    }
    return nb;
}

void save_net(const MlpNet& net, const std::filesystem::path& path)
{
    net.check();
    json j;
    j["format"] = "freqopf-mlp";
    j["version"] = kWeightsVersion;
    j["layer_dims"] = net.layer_dims;
    auto vec = [](const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    j["weights"] = json::array();
    j["biases"] = json::array();
    for (std::size_t m = 0; m < net.weights.size(); ++m) {
        std::vector<double> flat;
        for (Eigen::Index r = 0; r < net.weights[m].rows(); ++r)
            for (Eigen::Index c = 0; c < net.weights[m].cols(); ++c)
                flat.push_back(net.weights[m](r, c));
        j["weights"].push_back(flat);
        j["biases"].push_back(vec(net.biases[m]));
    }
    j["input_norm"] = {{"mean", vec(net.input_norm.mean)}, {"stddev", vec(net.input_norm.stddev)}};
    j["output_norm"] = {{"mean", vec(net.output_norm.mean)}, {"stddev", vec(net.output_norm.stddev)}};
    std::ofstream out(path);
    if (!out)
        throw Error(Errc::IoError, "cannot write " + path.string());
    out << j.dump(1) << "\n";
}

MlpNet load_net(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(Errc::IoError, "cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        json j = json::parse(ss.str());
        if (j.at("format").get<std::string>() != "freqopf-mlp" || j.at("version").get<int>() != kWeightsVersion)
            throw Error(Errc::CorruptWeights, "unsupported weights format or version");
        MlpNet net;
        net.layer_dims = j.at("layer_dims").get<std::vector<int>>();
        check_dims(net.layer_dims);
        const auto& W = j.at("weights");
        const auto& b = j.at("biases");
        if (W.size() + 1 != net.layer_dims.size() || b.size() + 1 != net.layer_dims.size())
            throw Error(Errc::CorruptWeights, "layer count does not match layer_dims");
        auto to_vec = [](const json& a) {
            auto v = a.get<std::vector<double>>();
            return VectorXd(Eigen::Map<VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
        };
        for (std::size_t m = 0; m < W.size(); ++m) {
            int rows = net.layer_dims[m + 1], cols = net.layer_dims[m];
            auto flat = W[m].get<std::vector<double>>();
            if (flat.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols))
                throw Error(Errc::CorruptWeights, "weight matrix " + std::to_string(m) + " has the wrong size");
            MatrixXd M(rows, cols);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c)
                    M(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
            net.weights.push_back(std::move(M));
            net.biases.push_back(to_vec(b[m]));
        }
        net.input_norm = {to_vec(j.at("input_norm").at("mean")), to_vec(j.at("input_norm").at("stddev"))};
        net.output_norm = {to_vec(j.at("output_norm").at("mean")), to_vec(j.at("output_norm").at("stddev"))};
        net.check();
        return net;
    } catch (const Error& e) {
        if (e.code() == Errc::CorruptWeights)
            throw;
        throw Error(Errc::CorruptWeights, e.what());
    } catch (const std::exception& e) {
        throw Error(Errc::CorruptWeights, std::string("unreadable weights file: ") + e.what());
    }
}

}  // namespace freqopf
