#pragma once

// Deep Koopman model: a learned lifting z = [x; phi(x)] with a linear
// transition z' = A z + B u, trained end to end on K-step rollouts plus a
// decoder reconstruction term. Everything operates in normalized units; the
// NormalizationSpec stored with the model maps to and from physical values.
//
// The rollout re-lifts the projected state every step, so only the first
// n rows of A and B carry prediction gradient; the remaining rows matter only
// to the pure-lifted evaluation mode and keep their initialization unless
// that mode is trained.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "koopsafe/dataset.hpp"
#include "koopsafe/errors.hpp"
#include "koopsafe/nn.hpp"
#include "koopsafe/normalize.hpp"
#include "koopsafe/rng.hpp"
#include "koopsafe/version.hpp"

namespace koopsafe {

struct TrainMeta {
    std::uint64_t seed = 0;
    int epochs = 0;
    double final_l = 0.0;
    double final_l1 = 0.0;
    double final_l2 = 0.0;
    double best_val_l1 = 0.0;
    std::string corpus_hash;
    std::string config_hash;
};

struct KoopmanModel {
    nn::DenseNet encoder;  // n -> lifted_dim - n
    nn::DenseNet decoder;  // lifted_dim -> n
    Eigen::MatrixXd a;     // lifted_dim x lifted_dim
    Eigen::MatrixXd b;     // lifted_dim x m
    NormalizationSpec norm;
    int n = 3;
    int m = 2;
    int lifted_dim = 15;
    TrainMeta train_meta;

    bool valid() const {
        return !encoder.layers.empty() && a.rows() == lifted_dim && a.cols() == lifted_dim &&
               b.rows() == lifted_dim && b.cols() == m;
    }
};

struct TrainConfig {
    int seq_len = 20;  // K
    int batch_size = 20;
    double lr = 1e-3;
    double gamma = 1.0;
    int epochs = 30;
    std::uint64_t seed = 0;
    double loss_w1 = 1.0;
    double loss_w2 = 1.0;
    double momentum = 0.0;  // 0 keeps plain SGD
    int embedding_dim = 12;
    std::vector<int> encoder_hidden{128, 128, 128};
    std::vector<int> decoder_hidden{128, 128, 128};
    int val_patience = 20;
};

inline void validate_train_config(const TrainConfig& c) {
    if (c.seq_len < 1 || c.batch_size < 1 || c.epochs < 0 || c.embedding_dim < 1 ||
        c.val_patience < 1)
        throw ConfigError("train config: counts must be positive");
    if (!(c.lr > 0.0) || !(c.gamma > 0.0) || c.gamma > 1.0)
        throw ConfigError("train config: need lr > 0 and gamma in (0, 1]");
    if (c.momentum < 0.0 || c.momentum >= 1.0)
        throw ConfigError("train config: momentum must lie in [0, 1)");
    if (c.loss_w1 < 0.0 || c.loss_w2 < 0.0)
        throw ConfigError("train config: loss weights must be >= 0");
}

inline KoopmanModel init_model(const TrainConfig& cfg, const NormalizationSpec& norm) {
    validate_train_config(cfg);
    KoopmanModel model;
    model.norm = norm;
    model.lifted_dim = model.n + cfg.embedding_dim;

    std::vector<int> enc{model.n};
    enc.insert(enc.end(), cfg.encoder_hidden.begin(), cfg.encoder_hidden.end());
    enc.push_back(cfg.embedding_dim);
    model.encoder = nn::init({enc}, derive_seed(cfg.seed, 0));

    std::vector<int> dec{model.lifted_dim};
    dec.insert(dec.end(), cfg.decoder_hidden.begin(), cfg.decoder_hidden.end());
    dec.push_back(model.n);
    model.decoder = nn::init({dec}, derive_seed(cfg.seed, 1));

    Rng rng_a = make_rng(derive_seed(cfg.seed, 2));
    model.a = nn::glorot_matrix(model.lifted_dim, model.lifted_dim, rng_a);
    Rng rng_b = make_rng(derive_seed(cfg.seed, 3));
    model.b = nn::glorot_matrix(model.lifted_dim, model.m, rng_b);
    model.train_meta.seed = cfg.seed;
    return model;
}

// ---- core maps (normalized domain) ----------------------------------------

inline Eigen::VectorXd lift(const KoopmanModel& model, const Eigen::Vector3d& x_norm) {
    Eigen::VectorXd z(model.lifted_dim);
    z.head(model.n) = x_norm;
    z.tail(model.lifted_dim - model.n) = nn::forward(model.encoder, Eigen::VectorXd(x_norm));
    return z;
}

inline Eigen::Vector3d project(const KoopmanModel& model, const Eigen::VectorXd& z) {
    if (z.size() != model.lifted_dim)
        throw DimensionError("project: lifted vector has the wrong size");
    return z.head(3);
}

inline Eigen::VectorXd step_lifted(const KoopmanModel& model, const Eigen::VectorXd& z,
                                   const Eigen::Vector2d& u_norm) {
    if (z.size() != model.lifted_dim)
        throw DimensionError("step_lifted: lifted vector has the wrong size");
    return model.a * z + model.b * u_norm;
}

// K-step prediction. Re-lift mode encodes the projected state again before
// every transition; pure-lifted mode keeps propagating z itself.
inline Eigen::Matrix3Xd predict_multistep(const KoopmanModel& model,
                                          const Eigen::Vector3d& x0_norm,
                                          const Eigen::Matrix2Xd& u_norm,
                                          bool relift = true) {
    const int k = static_cast<int>(u_norm.cols());
    Eigen::Matrix3Xd out(3, k);
    if (relift) {
        Eigen::Vector3d x = x0_norm;
        for (int i = 0; i < k; ++i) {
            const Eigen::VectorXd z = lift(model, x);
            x = model.a.topRows(3) * z + model.b.topRows(3) * u_norm.col(i);
            out.col(i) = x;
        }
    } else {
        Eigen::VectorXd z = lift(model, x0_norm);
        for (int i = 0; i < k; ++i) {
            z = step_lifted(model, z, u_norm.col(i));
            out.col(i) = z.head(3);
        }
    }
    return out;
}

// ---- losses and their exact gradients --------------------------------------

struct NormWindow {
    Eigen::Matrix3Xd x;  // 3 x (K+1), normalized
    Eigen::Matrix2Xd u;  // 2 x K, normalized
};

inline std::vector<NormWindow> normalize_windows(const NormalizationSpec& norm,
                                                 const std::vector<Window>& windows) {
    std::vector<NormWindow> out(windows.size());
    for (std::size_t w = 0; w < windows.size(); ++w) {
        out[w].x.resize(3, windows[w].x.cols());
        out[w].u.resize(2, windows[w].u.cols());
        for (int c = 0; c < windows[w].x.cols(); ++c)
            for (int r = 0; r < 3; ++r)
                out[w].x(r, c) = norm.normalize(r, windows[w].x(r, c));
        for (int c = 0; c < windows[w].u.cols(); ++c)
            for (int r = 0; r < 2; ++r)
                out[w].u(r, c) = norm.normalize(3 + r, windows[w].u(r, c));
    }
    return out;
}

struct KoopmanGradients {
    nn::GradientSet encoder;
    nn::GradientSet decoder;
    Eigen::MatrixXd da;
    Eigen::MatrixXd db;
};

struct LossParts {
    double total = 0.0;
    double prediction = 0.0;      // L1
    double reconstruction = 0.0;  // L2
};

// Joint rollout + reconstruction loss over one batch, averaged over windows,
// summed over steps with discount gamma^(i-1). Pass `grads` to also get the
// exact reverse-mode gradient of `total` for every parameter.
inline LossParts loss_and_gradients(const KoopmanModel& model,
                                    const std::vector<const NormWindow*>& batch,
                                    double gamma, double w1, double w2,
                                    KoopmanGradients* grads = nullptr) {
    if (batch.empty()) throw DimensionError("loss: empty batch");
    const int k = static_cast<int>(batch[0]->u.cols());
    const int nb = static_cast<int>(batch.size());
    const int lifted = model.lifted_dim;
    for (const NormWindow* w : batch)
        if (w->u.cols() != k || w->x.cols() != k + 1)
            throw DimensionError("loss: ragged window batch");

    // stack step i across the batch
    std::vector<Eigen::MatrixXd> xs(k + 1), us(k);
    for (int i = 0; i <= k; ++i) {
        xs[i].resize(3, nb);
        for (int c = 0; c < nb; ++c) xs[i].col(c) = batch[c]->x.col(i);
    }
    for (int i = 0; i < k; ++i) {
        us[i].resize(2, nb);
        for (int c = 0; c < nb; ++c) us[i].col(c) = batch[c]->u.col(i);
    }

    const Eigen::MatrixXd a_top = model.a.topRows(3);
    const Eigen::MatrixXd b_top = model.b.topRows(3);
    const double inv_nb = 1.0 / nb;

    // rollout, re-lifting each step
    std::vector<Eigen::MatrixXd> xhat(k + 1), zs(k), err(k + 1);
    std::vector<nn::ForwardCache> enc_cache(k);
    xhat[0] = xs[0];
    LossParts loss;
    double discount = 1.0;
    for (int i = 0; i < k; ++i) {
        const Eigen::MatrixXd phi = nn::forward(model.encoder, xhat[i], &enc_cache[i]);
        zs[i].resize(lifted, nb);
        zs[i].topRows(3) = xhat[i];
        zs[i].bottomRows(lifted - 3) = phi;
        xhat[i + 1].noalias() = a_top * zs[i];
        xhat[i + 1].noalias() += b_top * us[i];
        err[i + 1] = xhat[i + 1] - xs[i + 1];
        loss.prediction += discount * err[i + 1].squaredNorm() * inv_nb;
        discount *= gamma;
    }

    // reconstruction of the true states through lift + decode
    std::vector<nn::ForwardCache> enc2_cache(k + 1), dec_cache(k + 1);
    std::vector<Eigen::MatrixXd> rerr(k + 1);
    discount = 1.0;
    for (int i = 1; i <= k; ++i) {
        const Eigen::MatrixXd phi = nn::forward(model.encoder, xs[i], &enc2_cache[i]);
        Eigen::MatrixXd z2(lifted, nb);
        z2.topRows(3) = xs[i];
        z2.bottomRows(lifted - 3) = phi;
        const Eigen::MatrixXd rec = nn::forward(model.decoder, z2, &dec_cache[i]);
        rerr[i] = rec - xs[i];
        loss.reconstruction += discount * rerr[i].squaredNorm() * inv_nb;
        discount *= gamma;
    }
    loss.total = w1 * loss.prediction + w2 * loss.reconstruction;
    if (!grads) return loss;

    grads->encoder = nn::zero_like(model.encoder);
    grads->decoder = nn::zero_like(model.decoder);
    grads->da = Eigen::MatrixXd::Zero(lifted, lifted);
    grads->db = Eigen::MatrixXd::Zero(lifted, model.m);

    // L1 backward through time; only the top n rows of A and B are touched
    std::vector<Eigen::MatrixXd> dxhat(k + 1);
    for (int i = 1; i <= k; ++i)
        dxhat[i] = (w1 * std::pow(gamma, i - 1) * 2.0 * inv_nb) * err[i];
    for (int i = k - 1; i >= 0; --i) {
        grads->da.topRows(3).noalias() += dxhat[i + 1] * zs[i].transpose();
        grads->db.topRows(3).noalias() += dxhat[i + 1] * us[i].transpose();
        Eigen::MatrixXd dz;
        dz.noalias() = a_top.transpose() * dxhat[i + 1];  // lifted x nb
        Eigen::MatrixXd dx_enc;
        const nn::GradientSet ge = nn::backward(model.encoder, enc_cache[i],
                                                dz.bottomRows(lifted - 3), &dx_enc);
        nn::accumulate(grads->encoder, ge);
        Eigen::MatrixXd dcur = dz.topRows(3) + dx_enc;
        if (i >= 1) dxhat[i] += dcur;
    }

    // L2 backward: decoder params plus the encoder through the lifted input
    for (int i = 1; i <= k; ++i) {
        const Eigen::MatrixXd upstream =
            (w2 * std::pow(gamma, i - 1) * 2.0 * inv_nb) * rerr[i];
        Eigen::MatrixXd dz2;
        const nn::GradientSet gd =
            nn::backward(model.decoder, dec_cache[i], upstream, &dz2);
        nn::accumulate(grads->decoder, gd);
        const nn::GradientSet ge = nn::backward(model.encoder, enc2_cache[i],
                                                Eigen::MatrixXd(dz2.bottomRows(lifted - 3)));
        nn::accumulate(grads->encoder, ge);
    }
    return loss;
}

inline double loss_prediction(const KoopmanModel& model, const std::vector<Window>& windows,
                              double gamma) {
    const std::vector<NormWindow> nw = normalize_windows(model.norm, windows);
    std::vector<const NormWindow*> batch;
    for (const NormWindow& w : nw) batch.push_back(&w);
    return loss_and_gradients(model, batch, gamma, 1.0, 0.0).prediction;
}

inline double loss_reconstruction(const KoopmanModel& model,
                                  const std::vector<Window>& windows, double gamma) {
    const std::vector<NormWindow> nw = normalize_windows(model.norm, windows);
    std::vector<const NormWindow*> batch;
    for (const NormWindow& w : nw) batch.push_back(&w);
    return loss_and_gradients(model, batch, gamma, 0.0, 1.0).reconstruction;
}

// Aggregate normalized RMSE of the rollout over a window set, all channels
// and steps pooled. K = 1 windows give the one-step figure.
inline double rollout_rmse(const KoopmanModel& model, const std::vector<Window>& windows,
                           bool relift = true) {
    if (windows.empty()) throw EmptyTestSetError("rollout_rmse needs at least one window");
    const std::vector<NormWindow> nw = normalize_windows(model.norm, windows);
    double acc = 0.0;
    std::size_t count = 0;
    for (const NormWindow& w : nw) {
        const int k = static_cast<int>(w.u.cols());
        const Eigen::Matrix3Xd pred = predict_multistep(model, w.x.col(0), w.u, relift);
        acc += (pred - w.x.rightCols(k)).squaredNorm();
        count += static_cast<std::size_t>(3 * k);
    }
    return std::sqrt(acc / static_cast<double>(count));
}

// ---- training ---------------------------------------------------------------

struct EpochStats {
    int epoch = 0;
    double l = 0.0;
    double l1 = 0.0;
    double l2 = 0.0;
    double val_l1 = 0.0;
};

struct TrainResult {
    KoopmanModel model;
    std::vector<EpochStats> curve;
};

namespace detail {

// Validation L1 in evaluation-sized batches; no gradients.
inline double eval_prediction(const KoopmanModel& model, const std::vector<NormWindow>& set,
                              double gamma) {
    const int chunk = 256;
    double sum = 0.0;
    int count = 0;
    for (std::size_t begin = 0; begin < set.size(); begin += chunk) {
        std::vector<const NormWindow*> batch;
        for (std::size_t i = begin; i < std::min(set.size(), begin + chunk); ++i)
            batch.push_back(&set[i]);
        sum += loss_and_gradients(model, batch, gamma, 1.0, 0.0).prediction *
               static_cast<double>(batch.size());
        count += static_cast<int>(batch.size());
    }
    return sum / count;
}

struct Momentum {
    nn::GradientSet encoder, decoder;
    Eigen::MatrixXd da, db;
    bool live = false;
};

inline void apply_update(KoopmanModel& model, const KoopmanGradients& g,
                         const TrainConfig& cfg, Momentum& mom) {
    if (cfg.momentum == 0.0) {
        nn::sgd_step(model.encoder, g.encoder, cfg.lr);
        nn::sgd_step(model.decoder, g.decoder, cfg.lr);
        model.a -= cfg.lr * g.da;
        model.b -= cfg.lr * g.db;
        return;
    }
    if (!mom.live) {
        mom.encoder = nn::zero_like(model.encoder);
        mom.decoder = nn::zero_like(model.decoder);
        mom.da = Eigen::MatrixXd::Zero(model.a.rows(), model.a.cols());
        mom.db = Eigen::MatrixXd::Zero(model.b.rows(), model.b.cols());
        mom.live = true;
    }
    for (std::size_t l = 0; l < mom.encoder.dw.size(); ++l) {
        mom.encoder.dw[l] = cfg.momentum * mom.encoder.dw[l] + g.encoder.dw[l];
        mom.encoder.db[l] = cfg.momentum * mom.encoder.db[l] + g.encoder.db[l];
    }
    for (std::size_t l = 0; l < mom.decoder.dw.size(); ++l) {
        mom.decoder.dw[l] = cfg.momentum * mom.decoder.dw[l] + g.decoder.dw[l];
        mom.decoder.db[l] = cfg.momentum * mom.decoder.db[l] + g.decoder.db[l];
    }
    mom.da = cfg.momentum * mom.da + g.da;
    mom.db = cfg.momentum * mom.db + g.db;
    nn::sgd_step(model.encoder, mom.encoder, cfg.lr);
    nn::sgd_step(model.decoder, mom.decoder, cfg.lr);
    model.a -= cfg.lr * mom.da;
    model.b -= cfg.lr * mom.db;
}

}  // namespace detail

// Joint SGD over L = w1 L1 + w2 L2 on the training windows, early-stopped on
// validation L1 with the best-so-far parameters returned.
inline TrainResult train(const SplitDataset& data, const TrainConfig& cfg) {
    validate_train_config(cfg);
    if (data.train.empty() || data.val.empty())
        throw TooFewTrajectoriesError("training needs non-empty train and val windows");

    TrainResult result;
    result.model = init_model(cfg, data.norm);
    KoopmanModel& model = result.model;

    const std::vector<NormWindow> train_w = normalize_windows(data.norm, data.train);
    const std::vector<NormWindow> val_w = normalize_windows(data.norm, data.val);

    Rng shuffle_rng = make_rng(derive_seed(cfg.seed, 4));
    std::vector<int> order(train_w.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    KoopmanModel best = model;
    double best_val = 1e300;
    int since_best = 0;
    detail::Momentum momentum;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle(order, shuffle_rng);
        double sum_l = 0.0, sum_l1 = 0.0, sum_l2 = 0.0;
        std::size_t seen = 0;
        KoopmanGradients grads;
        while (seen < order.size()) {
            std::vector<const NormWindow*> batch;
            for (std::size_t i = seen;
                 i < std::min(order.size(), seen + static_cast<std::size_t>(cfg.batch_size));
                 ++i)
                batch.push_back(&train_w[order[i]]);
            const LossParts loss = loss_and_gradients(model, batch, cfg.gamma, cfg.loss_w1,
                                                      cfg.loss_w2, &grads);
            if (!std::isfinite(loss.total))
                throw DivergedError("training loss became non-finite at epoch " +
                                    std::to_string(epoch));
            detail::apply_update(model, grads, cfg, momentum);
            sum_l += loss.total * batch.size();
            sum_l1 += loss.prediction * batch.size();
            sum_l2 += loss.reconstruction * batch.size();
            seen += batch.size();
        }

        EpochStats row;
        row.epoch = epoch;
        row.l = sum_l / seen;
        row.l1 = sum_l1 / seen;
        row.l2 = sum_l2 / seen;
        row.val_l1 = detail::eval_prediction(model, val_w, cfg.gamma);
        if (!std::isfinite(row.val_l1))
            throw DivergedError("validation loss became non-finite at epoch " +
                                std::to_string(epoch));
        result.curve.push_back(row);

        if (row.val_l1 < best_val) {
            best_val = row.val_l1;
            best = model;
            since_best = 0;
        } else if (++since_best >= cfg.val_patience) {
            break;
        }
    }

    if (!result.curve.empty()) {
        model = best;
        const EpochStats& last = result.curve.back();
        model.train_meta.final_l = last.l;
        model.train_meta.final_l1 = last.l1;
        model.train_meta.final_l2 = last.l2;
        model.train_meta.best_val_l1 = best_val;
    }
    model.train_meta.seed = cfg.seed;
    model.train_meta.epochs = static_cast<int>(result.curve.size());
    return result;
}

// ---- persistence ------------------------------------------------------------

inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline nlohmann::json net_to_json(const nn::DenseNet& net) {
    nlohmann::json j;
    j["shapes"] = nlohmann::json::array();
    j["weights"] = nlohmann::json::array();
    j["biases"] = nlohmann::json::array();
    j["activations"] = nlohmann::json::array();
    for (const nn::Layer& l : net.layers) {
        j["shapes"].push_back({l.w.rows(), l.w.cols()});
        std::vector<double> w;
        w.reserve(l.w.size());
        for (int r = 0; r < l.w.rows(); ++r)
            for (int c = 0; c < l.w.cols(); ++c) w.push_back(l.w(r, c));
        j["weights"].push_back(w);
        j["biases"].push_back(std::vector<double>(l.b.data(), l.b.data() + l.b.size()));
        j["activations"].push_back(nn::activation_name(l.act));
    }
    return j;
}

inline nn::DenseNet net_from_json(const nlohmann::json& j, const char* which) {
    const auto fail = [&](const std::string& msg) {
        throw FormatError(std::string(which) + ": " + msg);
    };
    if (!j.contains("shapes") || !j.contains("weights") || !j.contains("biases") ||
        !j.contains("activations"))
        fail("missing net fields");
    const auto& shapes = j["shapes"];
    const std::size_t layers = shapes.size();
    if (j["weights"].size() != layers || j["biases"].size() != layers ||
        j["activations"].size() != layers || layers == 0)
        fail("inconsistent layer counts");

    nn::DenseNet net;
    for (std::size_t l = 0; l < layers; ++l) {
        const int rows = shapes[l][0].get<int>();
        const int cols = shapes[l][1].get<int>();
        const auto& w = j["weights"][l];
        const auto& b = j["biases"][l];
        if (rows <= 0 || cols <= 0 || static_cast<int>(w.size()) != rows * cols ||
            static_cast<int>(b.size()) != rows)
            fail("layer " + std::to_string(l) + " shape does not match its data");
        nn::Layer layer;
        layer.w.resize(rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) layer.w(r, c) = w[r * cols + c].get<double>();
        layer.b.resize(rows);
        for (int r = 0; r < rows; ++r) layer.b(r) = b[r].get<double>();
        layer.act = nn::activation_from_name(j["activations"][l].get<std::string>());
        if (!layer.w.allFinite() || !layer.b.allFinite()) fail("non-finite parameters");
        net.layers.push_back(std::move(layer));
    }
    try {
        nn::validate(net);
    } catch (const Error& e) {
        fail(e.what());
    }
    return net;
}

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, int rows, int cols,
                                        const char* which) {
    if (static_cast<int>(j.size()) != rows)
        throw FormatError(std::string(which) + ": expected " + std::to_string(rows) +
                          " rows, found " + std::to_string(j.size()));
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        if (static_cast<int>(j[r].size()) != cols)
            throw FormatError(std::string(which) + ": row " + std::to_string(r) +
                              " has the wrong width");
        for (int c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
    }
    if (!m.allFinite()) throw FormatError(std::string(which) + ": non-finite entries");
    return m;
}

}  // namespace detail

inline void save(const KoopmanModel& model, const std::string& path) {
    if (!model.valid()) throw ModelMissingError("save: model is not initialized");
    for (const auto& l : model.encoder.layers)
        if (!l.w.allFinite() || !l.b.allFinite())
            throw NonFiniteError("save: encoder has non-finite parameters");
    if (!model.a.allFinite() || !model.b.allFinite())
        throw NonFiniteError("save: transition matrices have non-finite entries");

    nlohmann::json j;
    j["format_version"] = kModelFormatVersion;
    j["n"] = model.n;
    j["m"] = model.m;
    j["lifted_dim"] = model.lifted_dim;
    j["encoder"] = detail::net_to_json(model.encoder);
    j["decoder"] = detail::net_to_json(model.decoder);
    j["A"] = detail::matrix_to_json(model.a);
    j["B"] = detail::matrix_to_json(model.b);
    j["norm"]["mins"] = model.norm.mins;
    j["norm"]["maxs"] = model.norm.maxs;
    j["train_meta"] = {{"seed", model.train_meta.seed},
                       {"epochs", model.train_meta.epochs},
                       {"final_losses",
                        {{"l", model.train_meta.final_l},
                         {"l1", model.train_meta.final_l1},
                         {"l2", model.train_meta.final_l2},
                         {"val_l1", model.train_meta.best_val_l1}}},
                       {"corpus_hash", model.train_meta.corpus_hash},
                       {"config_hash", model.train_meta.config_hash},
                       {"tool_version", kToolVersion}};

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << j.dump(1, '\t') << "\n";
}

inline KoopmanModel load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "' for reading");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("'" + path + "' is not valid json: " + e.what());
    }

    if (!j.contains("format_version") || !j["format_version"].is_number_integer())
        throw FormatError("'" + path + "': missing format_version");
    const int version = j["format_version"].get<int>();
    if (version != kModelFormatVersion)
        throw FormatError("'" + path + "': unsupported model format_version " +
                          std::to_string(version));

    KoopmanModel model;
    try {
        model.n = j.at("n").get<int>();
        model.m = j.at("m").get<int>();
        model.lifted_dim = j.at("lifted_dim").get<int>();
        if (model.n != 3 || model.m != 2 || model.lifted_dim <= model.n)
            throw FormatError("'" + path + "': unsupported model dimensions");
        model.encoder = detail::net_from_json(j.at("encoder"), "encoder");
        model.decoder = detail::net_from_json(j.at("decoder"), "decoder");
        model.a = detail::matrix_from_json(j.at("A"), model.lifted_dim, model.lifted_dim, "A");
        model.b = detail::matrix_from_json(j.at("B"), model.lifted_dim, model.m, "B");
        const auto& norm = j.at("norm");
        for (int ch = 0; ch < kNumChannels; ++ch) {
            model.norm.mins[ch] = norm.at("mins").at(ch).get<double>();
            model.norm.maxs[ch] = norm.at("maxs").at(ch).get<double>();
        }
        try {
            model.norm.check();
        } catch (const Error& e) {
            throw FormatError("'" + path + "': " + e.what());
        }
        const auto& meta = j.at("train_meta");
        model.train_meta.seed = meta.at("seed").get<std::uint64_t>();
        model.train_meta.epochs = meta.at("epochs").get<int>();
        model.train_meta.final_l = meta.at("final_losses").at("l").get<double>();
        model.train_meta.final_l1 = meta.at("final_losses").at("l1").get<double>();
        model.train_meta.final_l2 = meta.at("final_losses").at("l2").get<double>();
        model.train_meta.best_val_l1 = meta.at("final_losses").at("val_l1").get<double>();
        model.train_meta.corpus_hash = meta.at("corpus_hash").get<std::string>();
        model.train_meta.config_hash = meta.at("config_hash").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("'" + path + "': " + e.what());
    }

    if (model.encoder.input_dim() != model.n ||
        model.encoder.output_dim() != model.lifted_dim - model.n)
        throw FormatError("'" + path + "': encoder shape does not match lifted_dim");
    if (model.decoder.input_dim() != model.lifted_dim || model.decoder.output_dim() != model.n)
        throw FormatError("'" + path + "': decoder shape does not match lifted_dim");
    return model;
}

}  // namespace koopsafe
