#pragma once

#include "glassdet/checkpoint.hpp"
#include "glassdet/dataio.hpp"
#include "glassdet/metrics.hpp"
#include "glassdet/network.hpp"
#include "glassdet/optim.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

namespace glassdet {

struct TrainConfig {
    int epochs = 130;
    int batch_size = 14;
    double lr = 1e-4;
    int lr_drop_epoch = 120;  // divided by lr_drop_factor after this many epochs
    double lr_drop_factor = 10.0;
    uint64_t seed = 0;
    bool augment = true;  // 400->384-style random crop at any input size
    bool hflip = true;
    int64_t max_steps = 0;  // 0 = run the full schedule
    std::filesystem::path out_dir = "run";
};

inline void to_json(nlohmann::json& j, const TrainConfig& t) {
    j = nlohmann::json{{"epochs", t.epochs},
                       {"batch_size", t.batch_size},
                       {"lr", t.lr},
                       {"lr_drop_epoch", t.lr_drop_epoch},
                       {"lr_drop_factor", t.lr_drop_factor},
                       {"seed", t.seed},
                       {"augment", t.augment},
                       {"hflip", t.hflip},
                       {"max_steps", t.max_steps}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& t) {
    j.at("epochs").get_to(t.epochs);
    j.at("batch_size").get_to(t.batch_size);
    j.at("lr").get_to(t.lr);
    j.at("lr_drop_epoch").get_to(t.lr_drop_epoch);
    j.at("lr_drop_factor").get_to(t.lr_drop_factor);
    j.at("seed").get_to(t.seed);
    j.at("augment").get_to(t.augment);
    j.at("hflip").get_to(t.hflip);
    j.at("max_steps").get_to(t.max_steps);
}

inline double lr_at_epoch(const TrainConfig& tc, int epoch) {
    return epoch > tc.lr_drop_epoch ? tc.lr / tc.lr_drop_factor : tc.lr;
}

struct Batch {
    Tensor rgb, depth, dm, mask;
};

inline Batch make_batch(const std::vector<NetPlanes>& planes) {
    if (planes.empty()) throw ValueError("make_batch: empty batch");
    const int B = static_cast<int>(planes.size());
    const int S = planes[0].size;
    Batch b;
    b.rgb = Tensor::zeros({B, 3, S, S});
    b.depth = Tensor::zeros({B, 1, S, S});
    b.dm = Tensor::zeros({B, 1, S, S});
    b.mask = Tensor::zeros({B, 1, S, S});
    const int64_t n = static_cast<int64_t>(S) * S;
    for (int i = 0; i < B; ++i) {
        const NetPlanes& p = planes[static_cast<size_t>(i)];
        if (p.size != S) throw ShapeError("make_batch: inconsistent plane sizes");
        std::copy(p.rgb.begin(), p.rgb.end(), b.rgb.data().begin() + static_cast<int64_t>(i) * 3 * n);
        std::copy(p.depth.begin(), p.depth.end(), b.depth.data().begin() + static_cast<int64_t>(i) * n);
        std::copy(p.dm.begin(), p.dm.end(), b.dm.data().begin() + static_cast<int64_t>(i) * n);
        std::copy(p.mask.begin(), p.mask.end(), b.mask.data().begin() + static_cast<int64_t>(i) * n);
    }
    return b;
}

/// Eval-mode metrics of a model over a sample set at the network input size.
inline MetricReport evaluate_model(GlassNet& net, const std::vector<Sample>& samples,
                                   std::vector<MetricReport>* per_image = nullptr) {
    const int size = net.cfg.backbone.input_size;
    std::vector<std::vector<double>> preds;
    std::vector<std::vector<uint8_t>> gts;
    for (const Sample& s : samples) {
        const NetPlanes np = prepare_eval(s, size);
        const Batch b = make_batch({np});
        const Tensor prob = net.predict(b.rgb, b.depth, b.dm);
        preds.emplace_back(prob.data());
        std::vector<uint8_t> gt(np.mask.size());
        for (size_t i = 0; i < gt.size(); ++i) gt[i] = np.mask[i] != 0.0 ? 1 : 0;
        gts.push_back(std::move(gt));
    }
    if (per_image) {
        per_image->clear();
        for (size_t i = 0; i < preds.size(); ++i)
            per_image->push_back(evaluate_set({preds[i]}, {gts[i]}));
    }
    return evaluate_set(preds, gts);
}

struct TrainResult {
    std::filesystem::path checkpoint;
    double final_epoch_loss = 0.0;
    int epochs_run = 0;
    int64_t steps = 0;
    std::vector<double> per_epoch_loss;
};

/// Deterministic single-threaded trainer. The rng for shuffling and
/// augmentation is re-derived from (seed, epoch), so resuming from an epoch
/// checkpoint reproduces the uninterrupted trace.
class Trainer {
  public:
    Trainer(GlassNet& net, TrainConfig tc)
        : net_(net), tc_(std::move(tc)), sd_(net.state_dict()) {
        std::vector<Tensor> params;
        for (const auto& [name, t] : sd_.params) params.push_back(t);
        opt_ = AdamOptimizer(std::move(params), tc_.lr);
    }

    void set_log_stream(std::ostream* os) { echo_ = os; }

    /// Restores model, optimizer, and epoch counter from a checkpoint.
    void resume(const std::filesystem::path& ckpt) {
        const nlohmann::json meta = load_checkpoint(ckpt, sd_, &opt_);
        next_epoch_ = meta.at("epoch").get<int>() + 1;
        global_step_ = meta.at("global_step").get<int64_t>();
    }

    TrainResult run(const std::vector<Sample>& train_set) {
        if (train_set.empty()) throw ValueError("train: dataset is empty");
        std::filesystem::create_directories(tc_.out_dir);
        std::ofstream log(tc_.out_dir / "train.log", std::ios::app);
        const auto ckpt_path = tc_.out_dir / "checkpoint.bin";
        const int size = net_.cfg.backbone.input_size;

        TrainResult result;
        result.checkpoint = ckpt_path;
        bool stop = false;
        int epoch = next_epoch_;
        for (; epoch <= tc_.epochs && !stop; ++epoch) {
            opt_.lr = lr_at_epoch(tc_, epoch);
            std::mt19937_64 rng(detail::splitmix64(tc_.seed ^
                                                   detail::splitmix64(static_cast<uint64_t>(epoch))));
            std::vector<size_t> order(train_set.size());
            std::iota(order.begin(), order.end(), 0u);
            std::shuffle(order.begin(), order.end(), rng);

            double epoch_loss = 0.0;
            int64_t batches = 0;
            for (size_t pos = 0; pos < order.size() && !stop;
                 pos += static_cast<size_t>(tc_.batch_size)) {
                std::vector<NetPlanes> planes;
                const size_t end = std::min(order.size(), pos + static_cast<size_t>(tc_.batch_size));
                for (size_t i = pos; i < end; ++i) {
                    const Sample& s = train_set[order[i]];
                    planes.push_back(tc_.augment ? augment_train(s, size, rng, tc_.hflip)
                                                 : prepare_eval(s, size));
                }
                const Batch b = make_batch(planes);
                auto preds = net_.forward(b.rgb, b.depth, b.dm, Mode::train);
                Tensor loss = hybrid_loss(preds, b.mask, net_.cfg.loss_weights);
                if (!all_finite(loss))
                    throw ValueError("training diverged: non-finite loss at step " +
                                     std::to_string(global_step_) + ", lr=" +
                                     std::to_string(opt_.lr) +
                                     ", grad_norm=" + std::to_string(opt_.grad_norm()));
                opt_.zero_grad();
                loss.backward();
                opt_.step();
                ++global_step_;
                ++batches;
                epoch_loss += loss.value();
                if (tc_.max_steps > 0 && global_step_ >= tc_.max_steps) stop = true;
            }
            epoch_loss /= static_cast<double>(std::max<int64_t>(1, batches));
            char line[128];
            std::snprintf(line, sizeof(line), "epoch=%d loss=%.6f lr=%.6g", epoch, epoch_loss,
                          opt_.lr);
            log << line << "\n";
            log.flush();
            if (echo_) (*echo_) << line << std::endl;
            result.per_epoch_loss.push_back(epoch_loss);
            result.final_epoch_loss = epoch_loss;
            result.epochs_run = epoch;

            nlohmann::json meta;
            meta["epoch"] = epoch;
            meta["global_step"] = global_step_;
            meta["network"] = net_.cfg;
            meta["train"] = tc_;
            save_checkpoint(ckpt_path, sd_, meta, &opt_);
        }
        next_epoch_ = epoch;
        result.steps = global_step_;
        return result;
    }

    int64_t global_step() const { return global_step_; }
    AdamOptimizer& optimizer() { return opt_; }

  private:
    GlassNet& net_;
    TrainConfig tc_;
    StateDict sd_;
    AdamOptimizer opt_;
    int next_epoch_ = 1;
    int64_t global_step_ = 0;
    std::ostream* echo_ = nullptr;
};

/// Builds a fresh network from the checkpoint's stored configuration and
/// loads its weights.
inline GlassNet load_network(const std::filesystem::path& ckpt) {
    const nlohmann::json meta = read_checkpoint_meta(ckpt);
    NetworkConfig cfg = meta.at("network").get<NetworkConfig>();
    std::mt19937_64 rng(0);
    GlassNet net(cfg, rng);
    StateDict sd = net.state_dict();
    load_checkpoint(ckpt, sd);
    return net;
}

}  // namespace glassdet
