#include "banforge/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <unordered_set>

#include <json.hpp>

#include "banforge/checkpoint.hpp"
#include "banforge/fsio.hpp"
#include "banforge/rng.hpp"

namespace banforge {

namespace {

using nlohmann::json;

constexpr std::uint64_t kBatchOrderTag = 0x626f7264ULL;
constexpr std::uint64_t kAugmentTag = 0x61756721ULL;
constexpr int kEvalBatchClassify = 256;
constexpr int kEvalBatchLm = 32;

std::size_t row_argmax_idx(const real* row, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i) {
        if (row[i] > row[best]) best = i;
    }
    return best;
}

struct Batch {
    Tensor inputs;
    std::vector<int> labels; // per logits row; LM labels are time-major (t*b + s)
};

// Pad-4 random crop + horizontal flip, one rng per batch keyed on
// (seed, epoch, batch). Samples consume draws in batch order.
void augment_conv_batch(Tensor& inputs, Rng& rng) {
    const std::size_t b = inputs.dim(0), c = inputs.dim(1), h = inputs.dim(2), w = inputs.dim(3);
    constexpr std::size_t pad = 4;
    std::vector<real> padded((h + 2 * pad) * (w + 2 * pad));
    for (std::size_t s = 0; s < b; ++s) {
        const std::size_t dy = static_cast<std::size_t>(rng.below(2 * pad + 1));
        const std::size_t dx = static_cast<std::size_t>(rng.below(2 * pad + 1));
        const bool flip = rng.uniform() < 0.5;
        for (std::size_t ci = 0; ci < c; ++ci) {
            real* plane = inputs.data() + (s * c + ci) * h * w;
            std::fill(padded.begin(), padded.end(), real(0));
            for (std::size_t i = 0; i < h; ++i) {
                for (std::size_t j = 0; j < w; ++j) {
                    padded[(i + pad) * (w + 2 * pad) + j + pad] = plane[i * w + j];
                }
            }
            for (std::size_t i = 0; i < h; ++i) {
                for (std::size_t j = 0; j < w; ++j) {
                    const std::size_t src_j = flip ? (w - 1 - j) : j;
                    plane[i * w + j] = padded[(i + dy) * (w + 2 * pad) + src_j + dx];
                }
            }
        }
    }
}

Batch assemble_classification_batch(const Dataset& train, const std::vector<std::size_t>& indices) {
    Batch batch;
    batch.inputs = train.gather_rows(indices);
    batch.labels.reserve(indices.size());
    for (std::size_t i : indices) batch.labels.push_back(train.labels[i]);
    return batch;
}

Batch assemble_lm_batch(const LmWindows& windows, const std::vector<std::size_t>& indices) {
    const std::size_t b = indices.size();
    const std::size_t t_len = windows.seq_len;
    Batch batch;
    batch.inputs = Tensor({b, t_len});
    batch.labels.assign(b * t_len, 0);
    for (std::size_t j = 0; j < b; ++j) {
        const std::size_t s = indices[j];
        std::copy(windows.inputs.data() + s * t_len, windows.inputs.data() + (s + 1) * t_len,
                  batch.inputs.data() + j * t_len);
        // model logits are time-major: row t*b + j
        for (std::size_t t = 0; t < t_len; ++t) {
            batch.labels[t * b + j] = windows.targets[s * t_len + t];
        }
    }
    return batch;
}

// Per-sample DKPP permutations keyed on (permutation seed, epoch, batch,
// sample position): resampled on every mini-batch visit.
Tensor dkpp_targets_keyed(const Tensor& probs, const std::vector<int>& labels, std::uint64_t perm_seed,
                          std::uint64_t epoch, std::uint64_t batch_index) {
    const std::size_t b = probs.dim(0), n = probs.dim(1);
    Tensor out({b, n});
    for (std::size_t s = 0; s < b; ++s) {
        Tensor row({1, n}, std::vector<real>(probs.data() + s * n, probs.data() + (s + 1) * n));
        Rng rng = Rng::keyed(perm_seed, {epoch, batch_index, s});
        Tensor permuted = dkpp_targets(row, {labels[s]}, rng);
        std::copy(permuted.data(), permuted.data() + n, out.data() + s * n);
    }
    return out;
}

void sgd_step(ParameterSet& params, const ParameterSet& grads, ParameterSet& velocity,
              const std::unordered_set<std::string>& frozen, double lr, const TrainConfig& cfg) {
    const real mu = static_cast<real>(cfg.momentum);
    const real wd = static_cast<real>(cfg.weight_decay);
    const real step = static_cast<real>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.name(i);
        if (frozen.count(name)) continue;
        Tensor& theta = params.value(i);
        const Tensor& g = grads.at(name);
        Tensor& v = velocity.at(name);
        for (std::size_t j = 0; j < theta.numel(); ++j) {
            v[j] = mu * v[j] + (g[j] + wd * theta[j]);
            theta[j] -= step * v[j];
        }
    }
}

struct CwtmEpochStats {
    double sum = 0;
    double min = std::numeric_limits<double>::infinity();
    double max = -std::numeric_limits<double>::infinity();
    std::size_t count = 0;

    void absorb(const Tensor& teacher_probs) {
        const std::size_t b = teacher_probs.dim(0), n = teacher_probs.dim(1);
        for (std::size_t s = 0; s < b; ++s) {
            const real* row = teacher_probs.data() + s * n;
            const double m = static_cast<double>(row[row_argmax_idx(row, n)]);
            sum += m;
            min = std::min(min, m);
            max = std::max(max, m);
            count += 1;
        }
    }
};

} // namespace

const char* metric_name(EvalMetric metric) {
    return metric == EvalMetric::kErrorRate ? "error-rate" : "perplexity";
}

EvalMetric metric_from_name(const std::string& name) {
    if (name == "error-rate" || name == "error_rate") return EvalMetric::kErrorRate;
    if (name == "perplexity") return EvalMetric::kPerplexity;
    throw ArgumentError("unknown metric: " + name + " (expected error-rate|perplexity)");
}

void TrainConfig::validate(std::size_t train_size) const {
    if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
    if (batch_size < 1 || static_cast<std::size_t>(batch_size) > train_size) {
        throw ConfigError("train config: batch_size must lie in [1, train size " + std::to_string(train_size) + "]");
    }
    if (learning_rate <= 0.0) throw ConfigError("train config: learning_rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train config: momentum must lie in [0,1)");
    if (weight_decay < 0.0) throw ConfigError("train config: weight_decay must be nonnegative");
    if (schedule.factor <= 0.0 || schedule.factor >= 1.0) {
        throw ConfigError("train config: lr factor must lie in (0,1)");
    }
    if (schedule.kind == LrSchedule::Kind::kAdaptive && schedule.patience < 1) {
        throw ConfigError("train config: adaptive patience must be >= 1");
    }
    objective.validate();
}

std::string GenerationRecord::to_json() const {
    json j;
    j["generation"] = generation;
    j["seed"] = seed;
    j["checkpoint"] = checkpoint_path;
    j["final_train_loss"] = final_train_loss;
    j["val_metric"] = val_metric;
    j["test_metric"] = test_metric;
    j["wall_clock_seconds"] = wall_clock_seconds;
    j["status"] = status;
    return j.dump(2) + "\n";
}

GenerationRecord GenerationRecord::from_json(const std::string& text) {
    GenerationRecord r;
    try {
        json j = json::parse(text);
        r.generation = j.at("generation").get<int>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.checkpoint_path = j.at("checkpoint").get<std::string>();
        r.final_train_loss = j.at("final_train_loss").get<double>();
        r.val_metric = j.at("val_metric").get<double>();
        r.test_metric = j.at("test_metric").get<double>();
        r.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
        r.status = j.at("status").get<std::string>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("generation record: ") + e.what());
    }
    return r;
}

std::size_t DataBundle::train_size() const {
    if (is_lm()) {
        return make_lm_windows(*corpus, "train", seq_len).size();
    }
    return train.size();
}

int DataBundle::num_classes() const {
    if (is_lm()) return static_cast<int>(corpus->vocab_size());
    return train.num_classes;
}

const Dataset& DataBundle::classification_split(const std::string& split) const {
    const Dataset* ds = nullptr;
    if (split == "train") {
        ds = &train;
    } else if (split == "val") {
        ds = &val;
    } else if (split == "test") {
        ds = &test;
    } else {
        throw ArgumentError("unknown split: " + split);
    }
    if (ds->size() == 0) throw ArgumentError("split '" + split + "' is empty");
    return *ds;
}

double evaluate(const std::function<Tensor(const Tensor&)>& logits_fn, const DataBundle& data,
                const std::string& split, EvalMetric metric, int batch_size) {
    if (batch_size < 1) throw ArgumentError("evaluate: batch_size must be >= 1");
    if (metric == EvalMetric::kPerplexity) {
        if (!data.is_lm()) throw ArgumentError("perplexity needs an LM data bundle");
        const LmWindows windows = make_lm_windows(*data.corpus, split, data.seq_len);
        std::vector<double> nll;
        nll.reserve(windows.size() * windows.seq_len);
        for (std::size_t start = 0; start < windows.size(); start += static_cast<std::size_t>(batch_size)) {
            const std::size_t end = std::min(windows.size(), start + static_cast<std::size_t>(batch_size));
            std::vector<std::size_t> idx(end - start);
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
            const Batch batch = assemble_lm_batch(windows, idx);
            const Tensor logq = log_softmax(logits_fn(batch.inputs), 1.0);
            const std::size_t n = logq.dim(1);
            for (std::size_t r = 0; r < logq.dim(0); ++r) {
                nll.push_back(-static_cast<double>(logq[r * n + static_cast<std::size_t>(batch.labels[r])]));
            }
        }
        return perplexity_from_nll(nll);
    }

    const Dataset& ds = data.classification_split(split);
    std::size_t wrong = 0;
    for (std::size_t start = 0; start < ds.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(ds.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<std::size_t> idx(end - start);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
        const Tensor logits = logits_fn(ds.gather_rows(idx));
        const std::size_t n = logits.dim(1);
        for (std::size_t r = 0; r < logits.dim(0); ++r) {
            if (row_argmax_idx(logits.data() + r * n, n) != static_cast<std::size_t>(ds.labels[idx[r]])) {
                wrong += 1;
            }
        }
    }
    return static_cast<double>(wrong) / static_cast<double>(ds.size());
}

double evaluate(const Model& model, const DataBundle& data, const std::string& split, EvalMetric metric,
                int batch_size) {
    return evaluate([&](const Tensor& b) { return model.predict_logits(b); }, data, split, metric, batch_size);
}

double evaluate(const TeacherSnapshot& snapshot, const DataBundle& data, const std::string& split,
                EvalMetric metric, int batch_size) {
    return evaluate([&](const Tensor& b) { return snapshot.predict_logits(b); }, data, split, metric, batch_size);
}

GenerationRecord train_generation(const ModelSpec& spec, const TrainConfig& config,
                                  const TeacherSnapshot* teacher, const DataBundle& data,
                                  const std::filesystem::path& out_dir) {
    const auto t_start = std::chrono::steady_clock::now();
    spec.validate();
    const bool needs_teacher = config.objective.kind != ObjectiveKind::kCe;
    if (needs_teacher && teacher == nullptr) {
        throw ConfigError(std::string("objective ") + objective_name(config.objective.kind) +
                          " requires a teacher snapshot");
    }
    if (!needs_teacher && teacher != nullptr) {
        throw ConfigError("plain CE training must not receive a teacher");
    }
    if (teacher != nullptr && teacher->spec().num_classes != spec.num_classes) {
        throw ConfigError("teacher has " + std::to_string(teacher->spec().num_classes) +
                          " classes, student spec has " + std::to_string(spec.num_classes));
    }
    const std::size_t train_size = data.train_size();
    config.validate(train_size);
    if (config.metric == EvalMetric::kPerplexity && !data.is_lm()) {
        throw ConfigError("perplexity metric needs text data");
    }
    if (config.cache_teacher_probs && data.is_lm()) {
        throw ConfigError("cache_teacher_probs supports classification runs only");
    }
    if (config.cache_teacher_probs && data.augment_train) {
        throw ConfigError("cache_teacher_probs is only equivalent to on-the-fly teacher outputs without augmentation");
    }

    // The generation seed drives initialization; manifests configure models
    // once and each generation re-seeds from its own training seed.
    ModelSpec init_spec = spec;
    init_spec.init_seed = config.seed;
    Model model = build(init_spec);

    std::unordered_set<std::string> frozen;
    if (config.share_frozen_edges) {
        if (teacher == nullptr) throw ConfigError("share_frozen_edges requires a teacher");
        for (const std::string& name : model.edge_param_names()) {
            if (!teacher->params().has(name)) {
                throw ConfigError("teacher lacks edge parameter '" + name + "' required for share_frozen_edges");
            }
            try {
                model.params().set(name, teacher->params().at(name));
            } catch (const ArgumentError& e) {
                throw ConfigError(std::string("share_frozen_edges: ") + e.what());
            }
            frozen.insert(name);
        }
    }

    ParameterSet velocity;
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        velocity.add(model.params().name(i), Tensor::zeros(model.params().value(i).shape()));
    }

    std::filesystem::create_directories(out_dir);
    const std::filesystem::path metrics_path = out_dir / "metrics.csv";
    std::ofstream metrics(metrics_path, std::ios::trunc);
    if (!metrics) throw IoError("cannot open " + metrics_path.string());
    metrics << "epoch,lr,train_loss,val_metric,test_metric\n";
    metrics.flush();

    std::ofstream cwtm_log;
    if (config.objective.kind == ObjectiveKind::kCwtm) {
        cwtm_log.open(out_dir / "cwtm_weights.csv", std::ios::trunc);
        if (!cwtm_log) throw IoError("cannot open " + (out_dir / "cwtm_weights.csv").string());
        cwtm_log << "epoch,teacher_max_mean,teacher_max_min,teacher_max_max\n";
    }

    // Precomputed LM windows (pure function of the corpus and seq_len).
    std::optional<LmWindows> lm_windows;
    if (data.is_lm()) lm_windows = make_lm_windows(*data.corpus, "train", data.seq_len);

    // Teacher probability cache over the train split, row-aligned with it.
    std::optional<Tensor> teacher_cache;
    if (config.cache_teacher_probs && teacher != nullptr) {
        const Dataset& train = data.classification_split("train");
        Tensor cache({train.size(), static_cast<std::size_t>(spec.num_classes)});
        for (std::size_t start = 0; start < train.size(); start += kEvalBatchClassify) {
            const std::size_t end = std::min(train.size(), start + kEvalBatchClassify);
            std::vector<std::size_t> idx(end - start);
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
            const Tensor probs = teacher->predict_probs(train.gather_rows(idx), config.objective.temperature);
            std::copy(probs.data(), probs.data() + probs.numel(), cache.data() + start * probs.dim(1));
        }
        teacher_cache = std::move(cache);
    }

    GenerationRecord record;
    record.generation = teacher == nullptr ? 0 : teacher->generation() + 1;
    record.seed = config.seed;
    record.checkpoint_path = (out_dir / "checkpoint.banf").string();

    const int eval_batch = data.is_lm() ? kEvalBatchLm : kEvalBatchClassify;
    double lr = config.learning_rate;
    double best_val = std::numeric_limits<double>::infinity();
    int no_improve_epochs = 0;

    try {
        for (int epoch = 1; epoch <= config.epochs; ++epoch) {
            if (config.schedule.kind == LrSchedule::Kind::kStep) {
                for (int m : config.schedule.milestones) {
                    if (m == epoch) lr *= config.schedule.factor;
                }
            }

            std::vector<std::size_t> order = Rng::keyed(config.seed, {kBatchOrderTag, static_cast<std::uint64_t>(epoch)})
                                                 .permutation(train_size);
            double loss_sum = 0;
            std::size_t rows_seen = 0;
            std::size_t batch_index = 0;
            CwtmEpochStats cwtm_stats;

            for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size),
                             ++batch_index) {
                const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
                const std::vector<std::size_t> indices(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                       order.begin() + static_cast<std::ptrdiff_t>(end));
                Batch batch = data.is_lm() ? assemble_lm_batch(*lm_windows, indices)
                                           : assemble_classification_batch(data.train, indices);
                if (!data.is_lm() && data.augment_train && batch.inputs.rank() == 4) {
                    Rng rng = Rng::keyed(config.seed,
                                         {kAugmentTag, static_cast<std::uint64_t>(epoch), batch_index});
                    augment_conv_batch(batch.inputs, rng);
                }

                const std::size_t logit_rows = batch.labels.size();
                Tensor teacher_probs;
                if (teacher != nullptr) {
                    if (teacher_cache) {
                        teacher_probs = Tensor({logit_rows, static_cast<std::size_t>(spec.num_classes)});
                        const std::size_t n = teacher_probs.dim(1);
                        for (std::size_t j = 0; j < indices.size(); ++j) {
                            std::copy(teacher_cache->data() + indices[j] * n,
                                      teacher_cache->data() + (indices[j] + 1) * n, teacher_probs.data() + j * n);
                        }
                    } else {
                        teacher_probs = teacher->predict_probs(batch.inputs, config.objective.temperature);
                    }
                } else {
                    // CE: uniform placeholder rows; the CE path only reads labels.
                    teacher_probs = Tensor::full({logit_rows, static_cast<std::size_t>(spec.num_classes)},
                                                 real(1) / static_cast<real>(spec.num_classes));
                }

                if (config.objective.kind == ObjectiveKind::kCwtm) cwtm_stats.absorb(teacher_probs);

                DistillObjective effective = config.objective;
                if (config.objective.kind == ObjectiveKind::kDkpp) {
                    teacher_probs = dkpp_targets_keyed(teacher_probs, batch.labels, config.objective.permutation_seed,
                                                       static_cast<std::uint64_t>(epoch), batch_index);
                    effective.kind = ObjectiveKind::kKd;
                }
                DistillTargets targets(std::move(teacher_probs), batch.labels);

                Graph g;
                Var logits = model.forward(g, batch.inputs, true);
                Var loss = objective_loss(g, effective, logits, targets, nullptr);
                const double loss_value = static_cast<double>(loss.value()[0]);
                if (!std::isfinite(loss_value)) throw NumericError("training loss is non-finite");
                loss_sum += loss_value * static_cast<double>(logit_rows);
                rows_seen += logit_rows;

                ParameterSet grads = g.backward(loss);
                sgd_step(model.params(), grads, velocity, frozen, lr, config);
            }

            record.final_train_loss = loss_sum / static_cast<double>(rows_seen);
            record.val_metric = evaluate(model, data, "val", config.metric, eval_batch);
            record.test_metric = evaluate(model, data, "test", config.metric, eval_batch);

            metrics << epoch << ',' << fmt_real(lr) << ',' << fmt_real(record.final_train_loss) << ','
                    << fmt_real(record.val_metric) << ',' << fmt_real(record.test_metric) << '\n';
            metrics.flush();
            if (cwtm_log.is_open() && cwtm_stats.count > 0) {
                cwtm_log << epoch << ',' << fmt_real(cwtm_stats.sum / static_cast<double>(cwtm_stats.count)) << ','
                         << fmt_real(cwtm_stats.min) << ',' << fmt_real(cwtm_stats.max) << '\n';
                cwtm_log.flush();
            }
            std::cout << "[gen " << record.generation << "] epoch " << epoch << " lr " << lr << " train_loss "
                      << record.final_train_loss << " val " << record.val_metric << " test " << record.test_metric
                      << '\n';

            if (config.schedule.kind == LrSchedule::Kind::kAdaptive) {
                if (record.val_metric < best_val) {
                    best_val = record.val_metric;
                    no_improve_epochs = 0;
                } else {
                    no_improve_epochs += 1;
                    if (no_improve_epochs >= config.schedule.patience) {
                        lr *= config.schedule.factor;
                        no_improve_epochs = 0;
                    }
                }
            }
        }
    } catch (const NumericError& e) {
        record.status = "diverged";
        record.wall_clock_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        write_file_atomic(out_dir / "record.json", record.to_json());
        throw DivergenceError("generation " + std::to_string(record.generation) + " diverged: " + e.what());
    }

    save_checkpoint(out_dir / "checkpoint.banf", model);
    record.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    write_file_atomic(out_dir / "record.json", record.to_json());
    return record;
}

std::vector<GenerationRecord> run_ban_sequence(const std::vector<ModelSpec>& spec_sequence,
                                               const TrainConfig& config, int generations,
                                               const DataBundle& data, const std::filesystem::path& run_dir) {
    if (generations < 1) throw ArgumentError("run_ban_sequence: generations must be >= 1");
    if (spec_sequence.empty() ||
        (spec_sequence.size() != 1 && spec_sequence.size() != static_cast<std::size_t>(generations) + 1)) {
        throw ConfigError("spec sequence must have length 1 or generations+1, got " +
                          std::to_string(spec_sequence.size()));
    }
    if (config.objective.kind == ObjectiveKind::kCe) {
        throw ConfigError("BAN sequences need a distillation objective (kd|kd+l|cwtm|dkpp)");
    }

    auto spec_for = [&](int gen) -> const ModelSpec& {
        return spec_sequence.size() == 1 ? spec_sequence[0] : spec_sequence[static_cast<std::size_t>(gen)];
    };

    std::vector<GenerationRecord> records;

    TrainConfig teacher_config = config;
    teacher_config.objective = DistillObjective{}; // plain CE
    teacher_config.share_frozen_edges = false;
    teacher_config.cache_teacher_probs = false;
    records.push_back(train_generation(spec_for(0), teacher_config, nullptr, data, run_dir / "gen0"));

    TeacherSnapshot teacher = load_checkpoint(run_dir / "gen0" / "checkpoint.banf").to_snapshot(0);
    for (int k = 1; k <= generations; ++k) {
        TrainConfig student_config = config; // same schedule as the teacher by default
        student_config.seed = config.seed + static_cast<std::uint64_t>(k);
        records.push_back(
            train_generation(spec_for(k), student_config, &teacher, data, run_dir / ("gen" + std::to_string(k))));
        teacher = load_checkpoint(run_dir / ("gen" + std::to_string(k)) / "checkpoint.banf").to_snapshot(k);
    }
    return records;
}

EnsemblePredictor::EnsemblePredictor(std::vector<TeacherSnapshot> members, bool average_logits)
    : members_(std::move(members)), average_logits_(average_logits) {
    if (members_.empty()) throw ArgumentError("ensemble needs at least one member");
    for (const TeacherSnapshot& m : members_) {
        if (m.spec().num_classes != members_[0].spec().num_classes) {
            throw ConfigError("ensemble members disagree on class count");
        }
    }
}

Tensor EnsemblePredictor::predict(const Tensor& batch) const {
    Tensor acc;
    for (std::size_t i = 0; i < members_.size(); ++i) {
        Tensor out = average_logits_ ? members_[i].predict_logits(batch) : members_[i].predict_probs(batch, 1.0);
        if (i == 0) {
            acc = std::move(out);
        } else {
            if (!acc.same_shape(out)) throw ConfigError("ensemble member output shape mismatch");
            for (std::size_t j = 0; j < acc.numel(); ++j) acc[j] += out[j];
        }
    }
    const real inv = real(1) / static_cast<real>(members_.size());
    for (std::size_t j = 0; j < acc.numel(); ++j) acc[j] *= inv;
    return average_logits_ ? softmax(acc, 1.0) : acc;
}

Tensor ensemble_predict(const EnsemblePredictor& ensemble, const Tensor& batch) {
    return ensemble.predict(batch);
}

double evaluate_ensemble(const EnsemblePredictor& ensemble, const Dataset& split, int batch_size) {
    if (split.size() == 0) throw ArgumentError("evaluate_ensemble: empty split");
    if (batch_size < 1) throw ArgumentError("evaluate_ensemble: batch_size must be >= 1");
    std::size_t wrong = 0;
    for (std::size_t start = 0; start < split.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(split.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<std::size_t> idx(end - start);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
        const Tensor probs = ensemble.predict(split.gather_rows(idx));
        const std::size_t n = probs.dim(1);
        for (std::size_t r = 0; r < probs.dim(0); ++r) {
            if (row_argmax_idx(probs.data() + r * n, n) != static_cast<std::size_t>(split.labels[idx[r]])) {
                wrong += 1;
            }
        }
    }
    return static_cast<double>(wrong) / static_cast<double>(split.size());
}

std::string fmt_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace banforge
