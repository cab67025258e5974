#include "nasrl/engine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "nasrl/errors.hpp"
#include "nasrl/rng.hpp"

namespace nasrl {

using nlohmann::json;

namespace {

constexpr char kCheckpointMagic[8] = {'N', 'A', 'S', 'R', 'L', 'C', 'K', '1'};

std::string stage_prefix(std::size_t k) { return "stage " + std::to_string(k) + ": "; }

void check_ops(const std::vector<OpKind>& ops, const char* what) {
  if (ops.empty()) throw ConfigError(std::string(what) + " candidate list is empty");
  std::set<OpKind> seen(ops.begin(), ops.end());
  if (seen.size() != ops.size()) throw ConfigError(std::string(what) + " candidate list has duplicates");
}

}  // namespace

SearchConfig SearchConfig::defaults() {
  SearchConfig c;
  const int layers[] = {5, 8, 11}, channels[] = {16, 12, 8}, keep_n[] = {10, 6, 4}, keep_r[] = {6, 4, 3};
  for (int k = 0; k < 3; ++k) {
    StageConfig s;
    s.layers = layers[k];
    s.channels = channels[k];
    s.keep_normal = keep_n[k];
    s.keep_reduction = keep_r[k];
    c.stages.push_back(s);
  }
  return c;
}

void SearchConfig::validate() const {
  if (stages.empty()) throw ConfigError("at least one stage is required");
  cell.validate();
  check_ops(normal_ops, "normal");
  check_ops(reduction_ops, "reduction");
  for (std::size_t k = 0; k < stages.size(); ++k) {
    const auto& s = stages[k];
    const auto p = stage_prefix(k);
    if (s.layers < 3) throw ConfigError(p + "layers must be >= 3 to place two reduction cells");
    if (s.channels < 2) throw ConfigError(p + "channels must be >= 2");
    if (s.epochs < 1) throw ConfigError(p + "epochs must be >= 1");
    if (s.pretrain_epochs < 0 || s.pretrain_epochs >= s.epochs) {
      throw ConfigError(p + "pretrain_epochs must lie in [0, epochs)");
    }
    if (s.rl_interval < 1) throw ConfigError(p + "rl_interval must be >= 1");
    if (s.samples < 1) throw ConfigError(p + "samples must be >= 1");
    if (s.batch_size < 1) throw ConfigError(p + "batch_size must be >= 1");
    if (!(s.alpha_lr >= 0.0) || !std::isfinite(s.alpha_lr)) throw ConfigError(p + "alpha_lr must be >= 0");
    if (!(s.sgd.learning_rate > 0.0)) throw ConfigError(p + "sgd learning rate must be positive");
    if (!(s.sgd.momentum >= 0.0 && s.sgd.momentum < 1.0)) throw ConfigError(p + "sgd momentum must lie in [0,1)");
    if (!(s.sgd.weight_decay >= 0.0)) throw ConfigError(p + "weight decay must be >= 0");
    if (s.keep_normal < 1 || s.keep_reduction < 1) throw ConfigError(p + "keep_ops must be >= 1");
    if (k == 0) {
      if (s.keep_normal > int(normal_ops.size()) || s.keep_reduction > int(reduction_ops.size())) {
        throw ConfigError(p + "keep_ops exceeds the candidate set size (" + std::to_string(normal_ops.size()) + "/" +
                          std::to_string(reduction_ops.size()) + ")");
      }
      if (s.keep_normal != int(normal_ops.size()) || s.keep_reduction != int(reduction_ops.size())) {
        throw ConfigError(p + "keep_ops of the first stage must equal the candidate set size (" +
                          std::to_string(normal_ops.size()) + "/" + std::to_string(reduction_ops.size()) + ")");
      }
    } else {
      const auto& prev = stages[k - 1];
      if (s.layers <= prev.layers) throw ConfigError(p + "layer schedule must be strictly increasing");
      if (s.keep_normal > prev.keep_normal || s.keep_reduction > prev.keep_reduction) {
        throw ConfigError(p + "keep_ops exceeds the candidate set size left by the previous stage");
      }
    }
  }
  if (!(baseline_decay >= 0.0 && baseline_decay < 1.0)) throw ConfigError("baseline decay must lie in [0,1)");
  if (!std::isfinite(reward.beta)) throw ConfigError("reward beta must be finite");
  if (!std::isfinite(reward.reference_params)) throw ConfigError("reward reference_params must be finite");
  for (const auto& t : reward.extra_terms) {
    if (!(t.reference > 0.0)) throw ConfigError("reward term '" + t.metric + "' needs a positive reference");
    if (!MetricRegistry().contains(t.metric)) throw ConfigError("unknown reward metric '" + t.metric + "'");
  }
  if (val_batches < 1 || val_batch_size < 1) throw ConfigError("validation batches and batch size must be >= 1");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (checkpoint_every > 0 && checkpoint_path.empty()) throw ConfigError("checkpoint_every needs a checkpoint path");
}

int grow_layers(const SearchConfig& config, std::size_t k) {
  if (k >= config.stages.size()) throw ContractViolation("grow_layers: stage index out of range");
  return config.stages[k].layers;
}

CandidateSets transition_stage(const CandidateSets& sets, const ArchAlphas& final_alpha, const StageConfig& next) {
  return shrink_opset(final_alpha, sets, next.keep_normal, next.keep_reduction).sets;
}

std::string format_metrics_csv(const std::vector<MetricRecord>& history) {
  std::ostringstream os;
  os << "iteration,mean_sampled_params,max_sampled_accuracy,argmax_genotype_accuracy,reward_mean,baseline\n";
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& r : history) {
    os << r.iteration << ',' << r.mean_sampled_params << ',' << r.max_sampled_accuracy << ','
       << r.argmax_genotype_accuracy << ',' << r.reward_mean << ',' << r.baseline << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------

struct SearchEngine::State {
  std::size_t stage = 0;
  int epoch = 1;
  std::size_t batch_pos = 0;
  bool epoch_started = false;
  std::vector<std::size_t> order;
  Rng rng;
  CandidateSets sets;
  ArchAlphas alpha;
  BaselineState baseline;
  std::uint64_t network_seed = 0;
  std::unique_ptr<SuperNetwork> net;
  SgdState sgd;
  double reference_params = 1.0;
  int iteration = 0;
  int stage_updates = 0;
  std::vector<MetricRecord> history;
  std::vector<StageSummary> stages;
  bool done = false;
};

SearchEngine::SearchEngine(SearchConfig config, Dataset train, Dataset val)
    : SearchEngine(std::move(config), std::move(train), std::move(val), true) {}

SearchEngine::SearchEngine(SearchConfig config, Dataset train, Dataset val, bool fresh)
    : config_(std::move(config)), train_(std::move(train)), val_(std::move(val)), state_(std::make_unique<State>()) {
  config_.validate();
  if (train_.size() == 0) throw ConfigError("training split is empty");
  if (val_.size() == 0) throw ConfigError("validation split is empty");
  if (train_.class_count != val_.class_count || train_.channels() != val_.channels()) {
    throw ConfigError("training and validation splits disagree on classes or channels");
  }
  if (fresh) {
    state_->rng.seed(config_.seed);
    state_->sets = CandidateSets::full(config_.cell, config_.normal_ops, config_.reduction_ops);
    begin_stage(state_->rng());
  }
}

SearchEngine::~SearchEngine() = default;
SearchEngine::SearchEngine(SearchEngine&&) noexcept = default;
SearchEngine& SearchEngine::operator=(SearchEngine&&) noexcept = default;

void SearchEngine::set_progress_stream(std::ostream* os) { progress_ = os; }
void SearchEngine::on_alpha_update(std::function<void(const MetricRecord&)> hook) { hook_ = std::move(hook); }
const std::vector<MetricRecord>& SearchEngine::history() const { return state_->history; }
const ArchAlphas& SearchEngine::alpha() const { return state_->alpha; }
const CandidateSets& SearchEngine::candidate_sets() const { return state_->sets; }
const SuperNetwork& SearchEngine::network() const { return *state_->net; }
std::size_t SearchEngine::stage_index() const { return state_->stage; }
bool SearchEngine::finished() const { return state_->done; }

namespace {

NetworkConfig network_config(const SearchConfig& config, const StageConfig& stage, const CandidateSets& sets,
                             const Dataset& train) {
  NetworkConfig n;
  n.cell = config.cell;
  n.layers = stage.layers;
  n.channels = stage.channels;
  n.in_channels = train.channels();
  n.classes = train.class_count;
  n.candidates = sets;
  return n;
}

std::vector<Batch> all_batches(const Dataset& data, int batch_size) {
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  return make_batches(data, idx, batch_size);
}

}  // namespace

void SearchEngine::begin_stage(std::uint64_t network_seed) {
  State& s = *state_;
  const StageConfig& sc = config_.stages[s.stage];
  s.network_seed = network_seed;
  const NetworkConfig net_cfg = network_config(config_, sc, s.sets, train_);
  s.net = std::make_unique<SuperNetwork>(net_cfg, network_seed);
  s.alpha = ArchAlphas::zeros(s.sets);
  s.baseline = BaselineState{0.0, config_.baseline_decay, false};
  s.sgd = SgdState(sc.sgd);
  s.reference_params = config_.reward.reference_params > 0.0
                           ? config_.reward.reference_params
                           : double(uniform_genotype_parameters(net_cfg, OpKind::sep_conv_3x3, OpKind::skip_connect));
  s.epoch = 1;
  s.batch_pos = 0;
  s.epoch_started = false;
  s.stage_updates = 0;
}

void SearchEngine::weight_step(const Batch& batch) {
  State& s = *state_;
  Tape tape;
  TapeScope scope(tape);
  const ForwardContext ctx{BnMode::train};
  Tensor logits;
  if (config_.weight_path == WeightPath::mixed) {
    logits = s.net->forward_mixed(batch.images, table_probs(s.alpha.normal), table_probs(s.alpha.reduction), ctx);
  } else {
    logits = s.net->forward_discrete(batch.images, sample_genotype(s.alpha, s.rng), ctx);
  }
  backward(softmax_cross_entropy(logits, batch.labels));
  auto params = s.net->parameters();
  for (auto& p : params) p.grad();  // ops off the sampled path get a zero gradient
  sgd_step(params, s.sgd);
}

void SearchEngine::alpha_update() {
  State& s = *state_;
  const StageConfig& sc = config_.stages[s.stage];
  const NetworkConfig& net_cfg = s.net->config();

  std::vector<std::size_t> perm(val_.size());
  std::iota(perm.begin(), perm.end(), 0);
  nasrl::shuffle(perm.begin(), perm.end(), s.rng);
  perm.resize(std::min(perm.size(), std::size_t(config_.val_batches) * std::size_t(config_.val_batch_size)));
  std::sort(perm.begin(), perm.end());
  const auto val_batches = make_batches(val_, perm, config_.val_batch_size);

  SampleBatch batch;
  for (int m = 0; m < sc.samples; ++m) batch.genotypes.push_back(sample_genotype(s.alpha, s.rng));

  const std::size_t count = batch.genotypes.size();
  std::vector<double> accuracy(count);
  auto evaluate_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) accuracy[i] = evaluate_accuracy(*s.net, batch.genotypes[i], val_batches);
  };
  const std::size_t workers = std::min<std::size_t>(std::size_t(config_.workers), count);
  if (workers <= 1) {
    evaluate_range(0, count);
  } else {
    std::vector<std::future<void>> jobs;
    const std::size_t chunk = (count + workers - 1) / workers;
    for (std::size_t begin = 0; begin < count; begin += chunk) {
      jobs.push_back(std::async(std::launch::async, evaluate_range, begin, std::min(count, begin + chunk)));
    }
    for (auto& j : jobs) j.get();
  }

  RewardSpec spec = config_.reward;
  spec.reference_params = s.reference_params;
  const MetricRegistry registry;
  double params_sum = 0.0, max_acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    MetricVector mv{accuracy[i], count_parameters(batch.genotypes[i], net_cfg), {}};
    for (const auto& t : spec.extra_terms) {
      mv.extensions[t.metric] = registry.measure(t.metric, batch.genotypes[i], net_cfg, train_.height(), train_.width());
    }
    batch.rewards.push_back(reward_for(config_.reward_mode, mv, spec));
    batch.log_probs.push_back(log_prob(batch.genotypes[i], s.alpha));
    params_sum += double(mv.params);
    max_acc = std::max(max_acc, accuracy[i]);
  }

  reinforce_update(batch, s.baseline, s.alpha, {sc.alpha_lr, config_.use_baseline});

  const Genotype argmax = derive_genotype(s.alpha, s.sets);
  const double argmax_acc = evaluate_accuracy(*s.net, argmax, all_batches(val_, config_.val_batch_size));

  ++s.iteration;
  ++s.stage_updates;
  MetricRecord rec{s.iteration, params_sum / double(count), max_acc, argmax_acc, batch.mean_reward(),
                   s.baseline.value};
  s.history.push_back(rec);
  if (progress_) {
    *progress_ << "iter " << rec.iteration << " stage " << s.stage << " epoch " << s.epoch << " reward "
               << rec.reward_mean << " baseline " << rec.baseline << " params " << rec.mean_sampled_params
               << " max_acc " << rec.max_sampled_accuracy << " argmax_acc " << rec.argmax_genotype_accuracy << '\n';
    progress_->flush();
  }
  if (hook_) hook_(rec);
}

void SearchEngine::finish_stage() {
  State& s = *state_;
  const StageConfig& sc = config_.stages[s.stage];
  s.stages.push_back({sc.layers, sc.channels, s.sets, s.alpha, s.reference_params, s.stage_updates});
  if (s.stage + 1 < config_.stages.size()) {
    s.sets = transition_stage(s.sets, s.alpha, config_.stages[s.stage + 1]);
    ++s.stage;
    begin_stage(s.rng());
  } else {
    s.done = true;
  }
}

bool SearchEngine::run(std::optional<int> max_alpha_updates) {
  State& s = *state_;
  int budget = max_alpha_updates.value_or(-1);
  if (budget == 0) return s.done;
  while (!s.done) {
    const StageConfig& sc = config_.stages[s.stage];
    const std::size_t bs = std::size_t(sc.batch_size);
    if (!s.epoch_started) {
      s.order.resize(train_.size());
      std::iota(s.order.begin(), s.order.end(), 0);
      nasrl::shuffle(s.order.begin(), s.order.end(), s.rng);
      s.batch_pos = 0;
      s.epoch_started = true;
    }
    const std::size_t n_batches = std::max<std::size_t>(1, s.order.size() / bs);
    while (s.batch_pos < n_batches) {
      const std::size_t begin = s.batch_pos * bs;
      const std::size_t len = std::min(bs, s.order.size() - begin);
      weight_step(gather(train_, std::span(s.order).subspan(begin, len)));
      ++s.batch_pos;
      const int step = int(s.batch_pos);
      if (s.epoch > sc.pretrain_epochs && step % sc.rl_interval == 0) {
        alpha_update();
        if (config_.checkpoint_every > 0 && s.iteration % config_.checkpoint_every == 0) {
          save_checkpoint(config_.checkpoint_path);
        }
        if (budget > 0 && --budget == 0) return false;
      }
    }
    s.epoch_started = false;
    if (++s.epoch > sc.epochs) finish_stage();
  }
  return true;
}

SearchResult SearchEngine::result() const {
  const State& s = *state_;
  SearchResult r;
  r.sets = s.sets;
  r.genotype = derive_genotype(s.alpha, s.sets);
  r.network = s.net->config();
  r.params = count_parameters(r.genotype, r.network);
  r.accuracy = evaluate_accuracy(*s.net, r.genotype, all_batches(val_, config_.val_batch_size));
  r.history = s.history;
  r.stages = s.stages;
  return r;
}

// --- checkpoints ------------------------------------------------------------

namespace {

json sets_to_json(const EdgeCandidates& cands) {
  json out = json::array();
  for (const auto& edge : cands) {
    json names = json::array();
    for (OpKind k : edge) names.push_back(std::string(op_name(k)));
    out.push_back(std::move(names));
  }
  return out;
}

EdgeCandidates sets_from_json(const json& j) {
  EdgeCandidates out;
  for (const auto& edge : j) {
    std::vector<OpKind> ops;
    for (const auto& name : edge) {
      const auto k = op_from_name(name.get<std::string>());
      if (!k) throw FormatError("checkpoint names unknown operation " + name.dump(), 0);
      ops.push_back(*k);
    }
    out.push_back(std::move(ops));
  }
  return out;
}

json alpha_to_json(const ArchAlphas& a) { return {{"normal", a.normal.edges}, {"reduction", a.reduction.edges}}; }

ArchAlphas alpha_from_json(const json& j) {
  ArchAlphas a;
  a.normal.edges = j.at("normal").get<std::vector<std::vector<double>>>();
  a.reduction.edges = j.at("reduction").get<std::vector<std::vector<double>>>();
  return a;
}

json record_to_json(const MetricRecord& r) {
  return json::array({r.iteration, r.mean_sampled_params, r.max_sampled_accuracy, r.argmax_genotype_accuracy,
                      r.reward_mean, r.baseline});
}

MetricRecord record_from_json(const json& j) {
  return {j.at(0).get<int>(),    j.at(1).get<double>(), j.at(2).get<double>(),
          j.at(3).get<double>(), j.at(4).get<double>(), j.at(5).get<double>()};
}

std::string fingerprint(const SearchConfig& c, const Dataset& train, const Dataset& val) {
  std::ostringstream os;
  os << c.seed << '|' << train.size() << '|' << val.size() << '|' << c.stages.size();
  for (const auto& s : c.stages) os << '|' << s.layers << ',' << s.channels << ',' << s.keep_normal << ',' << s.keep_reduction;
  return os.str();
}

}  // namespace

void SearchEngine::save_checkpoint(const std::filesystem::path& path) const {
  const State& s = *state_;
  json doc;
  doc["version"] = 1;
  doc["fingerprint"] = fingerprint(config_, train_, val_);
  doc["stage"] = s.stage;
  doc["epoch"] = s.epoch;
  doc["batch_pos"] = s.batch_pos;
  doc["epoch_started"] = s.epoch_started;
  doc["order"] = s.order;
  doc["rng"] = rng_state(s.rng);
  doc["sets"] = {{"normal", sets_to_json(s.sets.normal)}, {"reduction", sets_to_json(s.sets.reduction)}};
  doc["alpha"] = alpha_to_json(s.alpha);
  doc["baseline"] = {s.baseline.value, s.baseline.decay, s.baseline.initialized};
  doc["network_seed"] = s.network_seed;
  json params = json::array();
  for (const auto& p : s.net->parameters()) params.push_back(std::vector<double>(p.data().begin(), p.data().end()));
  doc["params"] = std::move(params);
  json buffers = json::array();
  for (auto* b : const_cast<SuperNetwork&>(*s.net).buffers()) buffers.push_back({b->mean, b->var});
  doc["buffers"] = std::move(buffers);
  doc["velocity"] = s.sgd.velocity();
  doc["reference_params"] = s.reference_params;
  doc["iteration"] = s.iteration;
  doc["stage_updates"] = s.stage_updates;
  json history = json::array();
  for (const auto& r : s.history) history.push_back(record_to_json(r));
  doc["history"] = std::move(history);
  json stages = json::array();
  for (const auto& st : s.stages) {
    stages.push_back({{"layers", st.layers},
                      {"channels", st.channels},
                      {"sets", {{"normal", sets_to_json(st.sets.normal)}, {"reduction", sets_to_json(st.sets.reduction)}}},
                      {"alpha", alpha_to_json(st.final_alpha)},
                      {"reference_params", st.reference_params},
                      {"alpha_updates", st.alpha_updates}});
  }
  doc["stages"] = std::move(stages);
  doc["done"] = s.done;

  const auto bytes = json::to_cbor(doc);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw std::runtime_error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

SearchEngine SearchEngine::resume(const std::filesystem::path& checkpoint, SearchConfig config, Dataset train,
                                  Dataset val) {
  std::ifstream in(checkpoint, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + checkpoint.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (bytes.size() < sizeof kCheckpointMagic || !std::equal(kCheckpointMagic, kCheckpointMagic + 8, bytes.begin())) {
    throw FormatError("not a search checkpoint (bad magic)", 0);
  }
  json doc;
  try {
    doc = json::from_cbor(bytes.begin() + sizeof kCheckpointMagic, bytes.end());
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("corrupt checkpoint: ") + e.what(), sizeof kCheckpointMagic + e.byte);
  }

  SearchEngine engine(std::move(config), std::move(train), std::move(val), false);
  if (doc.at("version").get<int>() != 1) throw FormatError("unsupported checkpoint version", 8);
  if (doc.at("fingerprint").get<std::string>() != fingerprint(engine.config_, engine.train_, engine.val_)) {
    throw ConfigError("checkpoint was produced with a different configuration or dataset");
  }
  State& s = *engine.state_;
  s.stage = doc.at("stage").get<std::size_t>();
  s.sets.normal = sets_from_json(doc.at("sets").at("normal"));
  s.sets.reduction = sets_from_json(doc.at("sets").at("reduction"));
  if (s.stage >= engine.config_.stages.size()) throw FormatError("checkpoint stage index out of range", 0);
  engine.begin_stage(doc.at("network_seed").get<std::uint64_t>());
  s.epoch = doc.at("epoch").get<int>();
  s.batch_pos = doc.at("batch_pos").get<std::size_t>();
  s.epoch_started = doc.at("epoch_started").get<bool>();
  s.order = doc.at("order").get<std::vector<std::size_t>>();
  restore_rng_state(s.rng, doc.at("rng").get<std::string>());
  s.alpha = alpha_from_json(doc.at("alpha"));
  const auto& b = doc.at("baseline");
  s.baseline = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<bool>()};

  auto params = s.net->parameters();
  const auto& saved = doc.at("params");
  if (saved.size() != params.size()) throw FormatError("checkpoint parameter count mismatch", 0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto values = saved[i].get<std::vector<double>>();
    if (values.size() != params[i].numel()) throw FormatError("checkpoint parameter shape mismatch", 0);
    std::copy(values.begin(), values.end(), params[i].data().begin());
  }
  auto buffers = s.net->buffers();
  const auto& saved_buffers = doc.at("buffers");
  if (saved_buffers.size() != buffers.size()) throw FormatError("checkpoint buffer count mismatch", 0);
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    buffers[i]->mean = saved_buffers[i].at(0).get<std::vector<double>>();
    buffers[i]->var = saved_buffers[i].at(1).get<std::vector<double>>();
  }
  s.sgd.velocity() = doc.at("velocity").get<std::vector<std::vector<double>>>();
  s.reference_params = doc.at("reference_params").get<double>();
  s.iteration = doc.at("iteration").get<int>();
  s.stage_updates = doc.at("stage_updates").get<int>();
  for (const auto& r : doc.at("history")) s.history.push_back(record_from_json(r));
  for (const auto& st : doc.at("stages")) {
    StageSummary sum;
    sum.layers = st.at("layers").get<int>();
    sum.channels = st.at("channels").get<int>();
    sum.sets.normal = sets_from_json(st.at("sets").at("normal"));
    sum.sets.reduction = sets_from_json(st.at("sets").at("reduction"));
    sum.final_alpha = alpha_from_json(st.at("alpha"));
    sum.reference_params = st.at("reference_params").get<double>();
    sum.alpha_updates = st.at("alpha_updates").get<int>();
    s.stages.push_back(std::move(sum));
  }
  s.done = doc.at("done").get<bool>();
  return engine;
}

SearchResult run_search(const SearchConfig& config, const Dataset& train, const Dataset& val) {
  SearchEngine engine(config, train, val);
  engine.run();
  return engine.result();
}

StandaloneReport train_standalone(const Genotype& g, const CandidateSets& sets, const CellSpec& cell,
                                  const StandaloneOptions& options, const Dataset& train, const Dataset& val) {
  validate_genotype(g, sets);
  if (options.epochs < 0 || options.batch_size < 1) throw ConfigError("standalone training needs epochs >= 0 and batch_size >= 1");
  if (train.size() == 0 || val.size() == 0) throw ConfigError("standalone training needs non-empty splits");

  StandaloneReport report;
  NetworkConfig& cfg = report.network;
  cfg.cell = cell;
  cfg.layers = options.layers;
  cfg.channels = options.channels;
  cfg.in_channels = train.channels();
  cfg.classes = train.class_count;
  for (CellType type : {CellType::normal, CellType::reduction}) {
    for (OpKind op : resolve_ops(g.of(type), sets.of(type))) cfg.candidates.of(type).push_back({op});
  }
  const Genotype only{std::vector<int>(cfg.candidates.normal.size(), 0),
                      std::vector<int>(cfg.candidates.reduction.size(), 0)};
  SuperNetwork net(cfg, options.seed);
  report.params = count_parameters(only, cfg);

  Rng rng(options.seed);
  SgdState sgd(options.sgd);
  std::vector<std::size_t> order(train.size());
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    nasrl::shuffle(order.begin(), order.end(), rng);
    for (const Batch& batch : make_batches(train, order, options.batch_size)) {
      Tape tape;
      TapeScope scope(tape);
      backward(softmax_cross_entropy(net.forward_discrete(batch.images, only, {BnMode::train}), batch.labels));
      auto params = net.parameters();
      for (auto& p : params) p.grad();
      sgd_step(params, sgd);
    }
  }
  report.accuracy = evaluate_accuracy(net, only, all_batches(val, options.batch_size), BnMode::eval);
  return report;
}

}  // namespace nasrl
