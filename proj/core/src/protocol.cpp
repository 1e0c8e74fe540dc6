#include "efcn/train.hpp"

#include "efcn/errors.hpp"

#include <algorithm>
#include <exception>
#include <mutex>
#include <thread>

namespace efcn {

ProtocolConfig default_protocol_config() {
    ProtocolConfig cfg;
    cfg.cnn.lr = 0.1;
    cfg.cnn.epochs = 30;
    cfg.cnn.batch_size = 20;
    cfg.dense.lr = 0.01;
    cfg.dense.epochs = 20;
    cfg.dense.batch_size = 20;
    return cfg;
}

std::uint64_t fcn_init_seed(std::uint64_t protocol_seed) { return protocol_seed * 7919 + 17; }

std::uint64_t efcn_train_seed(std::uint64_t dense_seed, int t_w) {
    return dense_seed * 1000003ULL + static_cast<std::uint64_t>(t_w) + 1;
}

RunReport relax_protocol(const ProtocolConfig& cfg, const Dataset& train_set, const Dataset& test_set,
                         const ProgressFn& progress) {
    cfg.cnn.validate();
    cfg.dense.validate();
    if (cfg.cnn.epochs < 1) throw ConfigError("cnn.epochs", "protocol needs at least one CNN epoch");
    if (cfg.workers < 1) throw ConfigError("protocol.workers", "workers must be >= 1");

    RunReport report;
    report.cnn_spec = build_vanilla_cnn(cfg.channels, train_set.shape(), train_set.classes, cfg.dropout);

    // (1)-(2) train the CNN and snapshot at log-spaced epochs.
    const auto schedule = log_spaced_epochs(cfg.cnn.epochs, cfg.snapshots);
    TrainConfig cnn_cfg = cfg.cnn;
    TrainResult cnn = train(report.cnn_spec, TrainState{init_params(report.cnn_spec, cfg.seed), {}, 0}, train_set,
                            test_set, cnn_cfg, schedule, "cnn", progress);
    report.cnn = std::move(cnn.curve);
    report.cnn_final = std::move(cnn.final_state.theta);
    report.snapshots = std::move(cnn.snapshots);

    // (3) one map serves every snapshot.
    auto map = std::make_shared<const EmbeddingMap>(build_embedding_map(report.cnn_spec, cfg.embed));
    report.map = map;
    report.fcn_spec = map->fcn_spec();

    // (4)-(5) dense trainings are independent; fan them out.
    const std::size_t jobs = report.snapshots.size() + 1;
    report.efcn.resize(report.snapshots.size());
    for (std::size_t i = 0; i < report.snapshots.size(); ++i) {
        report.efcn[i].t_w = report.snapshots[i].epoch;
        report.efcn[i].theta_init = map->apply(report.snapshots[i].theta);
    }
    report.fcn_init = init_params(report.fcn_spec, fcn_init_seed(cfg.seed));

    std::mutex progress_mutex;
    ProgressFn locked;
    if (progress) {
        locked = [&](const std::string& id, const EpochMetrics& m) {
            std::lock_guard<std::mutex> lock(progress_mutex);
            progress(id, m);
        };
    }
    auto run_job = [&](std::size_t j) {
        if (j < report.efcn.size()) {
            EfcnRun& run = report.efcn[j];
            TrainConfig c = cfg.dense;
            c.seed = efcn_train_seed(cfg.dense.seed, run.t_w);
            TrainResult r = train(report.fcn_spec, TrainState{run.theta_init, {}, 0}, train_set, test_set, c, {},
                                  "efcn_tw" + std::to_string(run.t_w), locked);
            run.curve = std::move(r.curve);
            run.theta_final = std::move(r.final_state.theta);
        } else {
            TrainResult r = train(report.fcn_spec, TrainState{report.fcn_init, {}, 0}, train_set, test_set, cfg.dense,
                                  {}, "fcn", locked);
            report.fcn = std::move(r.curve);
            report.fcn_final = std::move(r.final_state.theta);
        }
    };

    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), jobs);
    if (workers <= 1) {
        for (std::size_t j = 0; j < jobs; ++j) run_job(j);
    } else {
        std::mutex queue_mutex;
        std::size_t next = 0;
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (;;) {
                        std::size_t j;
                        {
                            std::lock_guard<std::mutex> lock(queue_mutex);
                            if (next >= jobs) return;
                            j = next++;
                        }
                        run_job(j);
                    }
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& t : pool) t.join();
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }
    return report;
}

}  // namespace efcn
