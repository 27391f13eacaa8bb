// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#include "mile/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "mile/checkpoint.hpp"
#include "mile/image.hpp"
#include "mile/tokenizer.hpp"

namespace mile {
namespace {

std::mt19937_64 epoch_rng(std::uint64_t seed, int stage, std::size_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stage), static_cast<std::uint32_t>(epoch)};
  return std::mt19937_64(seq);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int stage, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  auto rng = epoch_rng(seed, stage, epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  return order;
}

std::filesystem::path epoch_checkpoint(const std::filesystem::path& dir, int stage, std::size_t epoch) {
  std::ostringstream name;
  name << "stage" << stage << "_epoch" << std::setw(4) << std::setfill('0') << epoch << ".ckpt";
  return dir / name.str();
}

template <typename T>
Tensor<T> batch_loss(const MileModel<T>& model, const std::vector<LmExample<T>>& data,
                     const std::vector<std::size_t>& order, std::size_t begin, std::size_t end) {
  // Summing in index order makes the batch loss independent of the shuffle
  // within a batch.
  std::vector<std::size_t> batch(order.begin() + begin, order.begin() + end);
  std::sort(batch.begin(), batch.end());
  std::size_t tokens = 0;
  for (const auto i : batch) tokens += data[i].answer.size();
  Tensor<T> total;
  for (const auto i : batch) {
    const auto& ex = data[i];
    auto l = model.forward_lm_loss(ex.pixels, ex.question, ex.answer);
    auto weighted = scale(l, static_cast<T>(ex.answer.size()) / static_cast<T>(tokens));
    total = total.defined() ? add(total, weighted) : weighted;
  }
  return total;
}

std::size_t parse_count(const std::map<std::string, std::string>& extra, const std::string& key,
                        const std::filesystem::path& path) {
  const auto it = extra.find(key);
  if (it == extra.end()) throw InputError("checkpoint '" + path.string() + "' has no training position ('" + key + "')");
  return static_cast<std::size_t>(std::stoull(it->second));
}

}  // namespace

std::string_view paradigm_name(Paradigm p) {
  switch (p) {
    case Paradigm::kOrigin:
      return "origin";
    case Paradigm::kInstruct:
      return "instruct";
    case Paradigm::kOriginThenInstruct:
      break;
  }
  return "origin_then_instruct";
}

Paradigm parse_paradigm(std::string_view name) {
  if (name == "origin") return Paradigm::kOrigin;
  if (name == "instruct") return Paradigm::kInstruct;
  if (name == "origin_then_instruct") return Paradigm::kOriginThenInstruct;
  throw ConfigError("unknown paradigm '" + std::string(name) +
                    "' (expected origin, instruct or origin_then_instruct)");
}

void TrainConfig::validate() const {
  if (!(base_lr > 0)) throw ConfigError("base_lr must be positive");
  if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
  if (min_lr < 0 || min_lr > base_lr) throw ConfigError("min_lr must lie in [0, base_lr]");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (max_answer_len == 0) throw ConfigError("max_answer_len must be positive");
  plan.validate();
}

std::vector<VqaSample> origin_samples(const std::vector<QARecord>& records, const std::filesystem::path& root) {
  std::vector<VqaSample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({root / r.image, r.question, r.answer, r.answer_type});
  return out;
}

std::vector<VqaSample> instruct_samples(const std::vector<InstructionRecord>& records,
                                        const std::filesystem::path& root) {
  std::vector<VqaSample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({root / r.image, r.instruction, r.answer, r.answer_type});
  return out;
}

template <typename T>
std::vector<LmExample<T>> tokenize_samples(const std::vector<VqaSample>& samples, const ModelConfig& config) {
  if (config.vocab_size != ByteTokenizer::kVocabSize) {
    throw ConfigError("text data needs the byte vocabulary (vocab_size " + std::to_string(ByteTokenizer::kVocabSize) +
                      "), model has " + std::to_string(config.vocab_size));
  }
  ByteTokenizer tok;
  std::map<std::filesystem::path, Tensor<T>> images;
  std::vector<LmExample<T>> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    auto it = images.find(s.image);
    if (it == images.end()) {
      const auto img = read_ppm(s.image);
      if (img.height != config.image_size || img.width != config.image_size) {
        throw DimensionError("image '" + s.image.string() + "' is " + std::to_string(img.height) + "x" +
                             std::to_string(img.width) + ", model expects " + std::to_string(config.image_size));
      }
      it = images.emplace(s.image, image_tensor<T>(img)).first;
    }
    LmExample<T> ex{it->second, tok.encode_question(s.prompt), tok.encode_answer(s.answer)};
    if (ex.question.size() > config.max_text_len || ex.answer.size() > config.max_text_len) {
      throw InputError("sample " + std::to_string(i) + " exceeds max_text_len " +
                       std::to_string(config.max_text_len) + " (prompt " + std::to_string(ex.question.size()) +
                       " tokens, answer " + std::to_string(ex.answer.size()) + ")");
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::string RunLog::csv() const {
  std::ostringstream os;
  os << "step,stage,lr,loss\n";
  os << std::setprecision(9);
  for (const auto& s : steps) os << s.step << ',' << s.stage << ',' << s.lr << ',' << s.loss << '\n';
  return os.str();
}

void RunLog::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os << csv();
}

template <typename T>
RunLog train(MileModel<T>& model, const TrainConfig& config, const StageSpec<T>& stage,
             const std::optional<std::filesystem::path>& resume_from) {
  config.validate();
  if (!model.plan_applied()) throw ContractError("train: apply a tuning plan first");
  if (stage.data == nullptr || stage.data->empty()) throw InputError("train: empty dataset");
  if (stage.epochs == 0) throw ConfigError("train: a stage needs at least one epoch");
  const auto started = std::chrono::steady_clock::now();
  const auto& data = *stage.data;
  const std::size_t n = data.size();
  const std::size_t per_epoch = (n + config.batch_size - 1) / config.batch_size;
  std::size_t total = stage.epochs * per_epoch;
  if (config.max_steps > 0) total = std::min(total, config.max_steps);

  AdamWOptions opts;
  opts.base_lr = config.base_lr;
  opts.weight_decay = config.weight_decay;
  opts.min_lr = config.min_lr;
  opts.total_steps = static_cast<std::int64_t>(total);
  AdamW<T> optimizer(model.parameters(), opts);

  std::size_t start_epoch = 0;
  if (resume_from) {
    OptimizerState<T> state;
    const auto header = load_checkpoint(*resume_from, model, &state);
    if (state.step < 0) throw InputError("checkpoint '" + resume_from->string() + "' has no optimizer state");
    if (parse_count(header.extra, "stage", *resume_from) != static_cast<std::size_t>(stage.stage)) {
      throw InputError("checkpoint '" + resume_from->string() + "' belongs to another stage");
    }
    state.options = opts;
    optimizer.load_state(state);
    start_epoch = parse_count(header.extra, "epoch", *resume_from);
  }

  std::filesystem::create_directories(config.out_dir);
  const std::string plan = config.plan.str();
  auto save = [&](const std::filesystem::path& path, std::size_t epochs_done) {
    save_checkpoint(path, model, plan, CheckpointKind::kFull, &optimizer.state(),
                    {{"stage", std::to_string(stage.stage)}, {"epoch", std::to_string(epochs_done)}});
  };

  RunLog log;
  std::size_t step = static_cast<std::size_t>(optimizer.step_count());
  for (std::size_t epoch = start_epoch; epoch < stage.epochs && step < total; ++epoch) {
    const auto order = epoch_order(n, config.seed, stage.stage, epoch);
    double sum = 0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < n && step < total; begin += config.batch_size) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      GradTape<T> tape;
      Tensor<T> loss;
      {
        ActiveTape<T> scope(tape);
        loss = batch_loss(model, data, order, begin, end);
      }
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss " + std::to_string(value) + " at stage " + std::to_string(stage.stage) +
                           " step " + std::to_string(step + 1) + "; last good checkpoint kept");
      }
      if (loss.requires_grad()) tape.backward(loss);
      const double lr = optimizer.step();
      optimizer.zero_grad();
      ++step;
      log.steps.push_back({stage.step_offset + step, stage.stage, lr, value});
      sum += value;
      ++batches;
    }
    log.epochs.push_back({stage.stage, epoch + 1, sum / static_cast<double>(batches)});
    if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0) {
      save(epoch_checkpoint(config.out_dir, stage.stage, epoch + 1), epoch + 1);
    }
  }
  save(stage.checkpoint, stage.epochs);
  log.checkpoint = stage.checkpoint;
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return log;
}

template <typename T>
RunLog train_two_stage(MileModel<T>& model, const TrainConfig& config, const std::vector<LmExample<T>>& origin,
                       const std::vector<LmExample<T>>& instruct) {
  if (origin.empty() || instruct.empty()) {
    throw InputError("origin_then_instruct needs both an origin and an instruction dataset");
  }
  RunLog log = train(model, config, StageSpec<T>{1, &origin, config.epochs, config.out_dir / "stage1.ckpt"});
  if (config.stage2_epochs == 0) return log;
  const auto second = train(model, config,
                            StageSpec<T>{2, &instruct, config.stage2_epochs, config.out_dir / "stage2.ckpt",
                                         log.steps.size()});
  log.steps.insert(log.steps.end(), second.steps.begin(), second.steps.end());
  log.epochs.insert(log.epochs.end(), second.epochs.begin(), second.epochs.end());
  log.wall_seconds += second.wall_seconds;
  log.checkpoint = second.checkpoint;
  return log;
}

std::string normalize_answer(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  while (!out.empty() && std::string_view(".,!?;:").find(out.back()) != std::string_view::npos) {
    out.pop_back();
    while (!out.empty() && out.back() == ' ') out.pop_back();
  }
  return out;
}

double EvalReport::acc_open() const {
  return n_open == 0 ? 0.0 : 100.0 * static_cast<double>(correct_open) / static_cast<double>(n_open);
}

double EvalReport::acc_closed() const {
  return n_closed == 0 ? 0.0 : 100.0 * static_cast<double>(correct_closed) / static_cast<double>(n_closed);
}

double EvalReport::acc_global() const {
  const auto n = n_open + n_closed;
  return n == 0 ? 0.0 : 100.0 * static_cast<double>(correct_open + correct_closed) / static_cast<double>(n);
}

std::string EvalReport::table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "split    count  accuracy\n";
  os << "open   " << std::setw(7) << n_open << std::setw(9) << acc_open() << "%\n";
  os << "closed " << std::setw(7) << n_closed << std::setw(9) << acc_closed() << "%\n";
  os << "global " << std::setw(7) << n_open + n_closed << std::setw(9) << acc_global() << "%\n";
  return os.str();
}

std::string EvalReport::csv() const {
  std::ostringstream os;
  os << "n_open,n_closed,acc_open,acc_closed,acc_global\n" << std::fixed << std::setprecision(4) << n_open << ','
     << n_closed << ',' << acc_open() << ',' << acc_closed() << ',' << acc_global() << '\n';
  return os.str();
}

template <typename T>
EvalReport evaluate(const MileModel<T>& model, const std::vector<QARecord>& records,
                    const std::filesystem::path& image_root, std::size_t max_len, std::size_t workers) {
  if (records.empty()) throw InputError("evaluate: empty benchmark");
  const auto examples = tokenize_samples<T>(origin_samples(records, image_root), model.config());
  ByteTokenizer tok;
  EvalReport report;
  report.predictions.resize(records.size());
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& r = records[i];
      const auto out = model.generate(examples[i].pixels, examples[i].question, max_len);
      auto& p = report.predictions[i];
      p.question = r.question;
      p.reference = r.answer;
      p.prediction = tok.decode(out);
      p.answer_type = r.answer_type;
      p.correct = normalize_answer(p.prediction) == normalize_answer(p.reference);
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, records.size());
  if (workers == 1) {
    run(0, records.size());
  } else {
    std::vector<std::thread> threads;
    const std::size_t chunk = (records.size() + workers - 1) / workers;
    for (std::size_t begin = 0; begin < records.size(); begin += chunk) {
      threads.emplace_back(run, begin, std::min(records.size(), begin + chunk));
    }
    for (auto& t : threads) t.join();
  }
  for (const auto& p : report.predictions) {
    if (p.answer_type == AnswerType::kOpen) {
      ++report.n_open;
      report.correct_open += p.correct;
    } else {
      ++report.n_closed;
      report.correct_closed += p.correct;
    }
  }
  return report;
}

std::vector<QARecord> read_eval_records(const std::filesystem::path& path, const AttributeRules& rules) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open '" + path.string() + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
    if (j.contains("instruction") || j.contains("options")) {
      throw InputError(path.string() + " line " + std::to_string(lineno) +
                       ": evaluation takes original-format questions; instruction records with candidate "
                       "options are rejected");
    }
  }
  auto records = read_qa_records(path, rules);
  if (records.empty()) throw InputError("evaluate: '" + path.string() + "' holds no records");
  return records;
}

#define MILE_INSTANTIATE_TRAIN(T)                                                                         \
  template std::vector<LmExample<T>> tokenize_samples(const std::vector<VqaSample>&, const ModelConfig&); \
  template RunLog train(MileModel<T>&, const TrainConfig&, const StageSpec<T>&,                          \
                        const std::optional<std::filesystem::path>&);                                     \
  template RunLog train_two_stage(MileModel<T>&, const TrainConfig&, const std::vector<LmExample<T>>&,    \
                                  const std::vector<LmExample<T>>&);                                      \
  template EvalReport evaluate(const MileModel<T>&, const std::vector<QARecord>&,                         \
                               const std::filesystem::path&, std::size_t, std::size_t);

MILE_INSTANTIATE_TRAIN(float)
MILE_INSTANTIATE_TRAIN(double)

#undef MILE_INSTANTIATE_TRAIN

}  // namespace mile
