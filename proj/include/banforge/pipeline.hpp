#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "banforge/data.hpp"
#include "banforge/model.hpp"
#include "banforge/objectives.hpp"

namespace banforge {

enum class EvalMetric { kErrorRate, kPerplexity };

const char* metric_name(EvalMetric metric);
EvalMetric metric_from_name(const std::string& name);

struct LrSchedule {
    enum class Kind { kStep, kAdaptive };
    Kind kind = Kind::kStep;
    std::vector<int> milestones; // 1-based epochs; the factor applies at epoch start
    double factor = 0.1;         // in (0,1)
    int patience = 1;            // adaptive: decay after this many epochs without improvement
};

struct TrainConfig {
    int epochs = 1;
    int batch_size = 32;
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0;
    LrSchedule schedule;
    std::uint64_t seed = 0;
    DistillObjective objective;
    EvalMetric metric = EvalMetric::kErrorRate;
    // Copies the teacher's first/last layer into the student and freezes them
    // (no update, hence no weight decay on frozen layers).
    bool share_frozen_edges = false;
    // Precomputes teacher probabilities for the whole train split once.
    // Equivalent to the on-the-fly path only without augmentation, which is
    // why the combination with augment is rejected.
    bool cache_teacher_probs = false;

    void validate(std::size_t train_size) const;
};

struct GenerationRecord {
    int generation = 0; // 0 = teacher
    std::uint64_t seed = 0;
    std::string checkpoint_path;
    double final_train_loss = 0;
    double val_metric = 0;
    double test_metric = 0;
    double wall_clock_seconds = 0;
    std::string status = "ok";

    std::string to_json() const;
    static GenerationRecord from_json(const std::string& text);
};

// Everything a training run consumes. Classification runs use the three
// datasets; the LM track uses the corpus plus seq_len.
struct DataBundle {
    Dataset train;
    Dataset val;
    Dataset test;
    std::optional<CharCorpus> corpus;
    std::size_t seq_len = 0;
    bool augment_train = false; // pad-4 random crop + horizontal flip (conv inputs)

    bool is_lm() const { return corpus.has_value(); }
    std::size_t train_size() const;
    int num_classes() const;
    const Dataset& classification_split(const std::string& split) const; // ArgumentError if empty
};

// Trains one generation to completion under the schedule, writing
// checkpoint.banf, metrics.csv (epoch,lr,train_loss,val_metric,test_metric)
// and record.json into out_dir. The teacher must be present exactly when the
// objective is not plain CE; its probabilities are computed per batch from
// the frozen snapshot. The run seed drives initialization, batch order and
// DKPP permutations, so identical inputs reproduce bit-identical artifacts.
GenerationRecord train_generation(const ModelSpec& spec, const TrainConfig& config,
                                  const TeacherSnapshot* teacher, const DataBundle& data,
                                  const std::filesystem::path& out_dir);

// Generation 0 trains with CE; generation i > 0 distills from generation i-1
// with the configured objective and seed base_seed + i. spec_sequence holds
// one spec (identical architectures) or k+1 specs (cross-architecture chain).
// Results land in run_dir/gen<i>; a failed generation halts the chain with
// the completed generations already persisted.
std::vector<GenerationRecord> run_ban_sequence(const std::vector<ModelSpec>& spec_sequence,
                                               const TrainConfig& config, int generations,
                                               const DataBundle& data,
                                               const std::filesystem::path& run_dir);

// Averages member predictions (Born-Again Network Ensemble).
class EnsemblePredictor {
public:
    explicit EnsemblePredictor(std::vector<TeacherSnapshot> members, bool average_logits = false);

    // Post-softmax probability averaging by default (rows sum to 1 within
    // 1e-12); logit averaging behind the flag for comparison.
    Tensor predict(const Tensor& batch) const;

    std::size_t size() const { return members_.size(); }
    const TeacherSnapshot& member(std::size_t i) const { return members_.at(i); }

private:
    std::vector<TeacherSnapshot> members_;
    bool average_logits_ = false;
};

Tensor ensemble_predict(const EnsemblePredictor& ensemble, const Tensor& batch);

// error-rate: fraction of argmax mispredictions (ties -> lowest index).
// perplexity: exp(mean per-token NLL) over the split's windows.
double evaluate(const std::function<Tensor(const Tensor&)>& logits_fn, const DataBundle& data,
                const std::string& split, EvalMetric metric, int batch_size);
double evaluate(const Model& model, const DataBundle& data, const std::string& split, EvalMetric metric,
                int batch_size);
double evaluate(const TeacherSnapshot& snapshot, const DataBundle& data, const std::string& split,
                EvalMetric metric, int batch_size);
double evaluate_ensemble(const EnsemblePredictor& ensemble, const Dataset& split, int batch_size);

// Fixed "%.17g" rendering used for every number in CSV outputs.
std::string fmt_real(double v);

} // namespace banforge
