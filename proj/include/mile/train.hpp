// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mile/datagen.hpp"
#include "mile/model.hpp"
#include "mile/optim.hpp"
#include "mile/tuning.hpp"

namespace mile {

// ♣ ordinary data, ♠ instruction data, ♣ then ♠.
enum class Paradigm { kOrigin, kInstruct, kOriginThenInstruct };

std::string_view paradigm_name(Paradigm p);
Paradigm parse_paradigm(std::string_view name);

struct TrainConfig {
  double base_lr = 2e-5;
  double weight_decay = 0.05;
  double min_lr = 0.0;
  std::size_t epochs = 50;
  // Length of the instruction stage of origin_then_instruct; 0 skips it.
  std::size_t stage2_epochs = 50;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  Paradigm paradigm = Paradigm::kOrigin;
  TuningPlan plan = TuningPlan::parse("F,LoRA4,LoRA4");
  // Cap on optimizer steps per stage (0 = run all epochs); the cosine
  // schedule spans the capped length.
  std::size_t max_steps = 0;
  // Save a resumable checkpoint every N epochs (0 = only at the end).
  std::size_t checkpoint_every = 0;
  std::filesystem::path out_dir = "runs/default";
  // Generation length limit used by evaluation.
  std::size_t max_answer_len = 32;

  void validate() const;
};

/// One training or evaluation item in text form.
struct VqaSample {
  std::filesystem::path image;
  std::string prompt;  // question text, or the rendered instruction
  std::string answer;
  AnswerType answer_type = AnswerType::kOpen;
};

// Origin-format samples from QA records (paths resolved against `root`).
std::vector<VqaSample> origin_samples(const std::vector<QARecord>& records, const std::filesystem::path& root);
// Instruction-format samples: the prompt is the rendered instruction.
std::vector<VqaSample> instruct_samples(const std::vector<InstructionRecord>& records,
                                        const std::filesystem::path& root);

/// Tokenized samples with decoded images; identical image paths share pixels.
template <typename T>
std::vector<LmExample<T>> tokenize_samples(const std::vector<VqaSample>& samples, const ModelConfig& config);

struct StepRecord {
  std::size_t step = 0;  // 1-based, counted across stages
  int stage = 1;
  double lr = 0;
  double loss = 0;
};

struct EpochRecord {
  int stage = 1;
  std::size_t epoch = 0;
  double mean_loss = 0;
};

struct RunLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0;
  std::filesystem::path checkpoint;

  // "step,stage,lr,loss"
  std::string csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Everything needed to run one stage.
template <typename T>
struct StageSpec {
  int stage = 1;
  const std::vector<LmExample<T>>* data = nullptr;
  std::size_t epochs = 0;
  std::filesystem::path checkpoint;  // final checkpoint of this stage
  std::size_t step_offset = 0;       // steps logged by earlier stages
};

/// Runs mini-batch AdamW on `model` (plan already applied). The batch loss is
/// the mean over all answer tokens in the batch. Batches are drawn from a
/// per-epoch shuffle seeded by (seed, stage, epoch). A non-finite loss throws
/// NumericError before any update, leaving earlier checkpoints intact.
/// `resume_from`, when set, restores weights, optimizer state and position
/// from a checkpoint written by an earlier call with the same arguments.
template <typename T>
RunLog train(MileModel<T>& model, const TrainConfig& config, const StageSpec<T>& stage,
             const std::optional<std::filesystem::path>& resume_from = std::nullopt);

/// Stage 1 on origin data, then stage 2 from the stage-1 weights on
/// instruction data with a fresh optimizer and schedule. Both stages share
/// one RunLog. stage2_epochs = 0 skips the second stage.
template <typename T>
RunLog train_two_stage(MileModel<T>& model, const TrainConfig& config, const std::vector<LmExample<T>>& origin,
                       const std::vector<LmExample<T>>& instruct);

// Lowercase, trim, collapse internal whitespace, strip trailing punctuation.
std::string normalize_answer(std::string_view text);

struct EvalPrediction {
  std::string question;
  std::string reference;
  std::string prediction;
  AnswerType answer_type = AnswerType::kOpen;
  bool correct = false;
};

struct EvalReport {
  std::size_t n_open = 0;
  std::size_t n_closed = 0;
  std::size_t correct_open = 0;
  std::size_t correct_closed = 0;
  std::vector<EvalPrediction> predictions;

  // Percentages; an empty category scores 0.
  double acc_open() const;
  double acc_closed() const;
  // Count-weighted mean of the two.
  double acc_global() const;

  std::string table() const;
  // "n_open,n_closed,acc_open,acc_closed,acc_global" plus one data row.
  std::string csv() const;
};

/// Greedy generation on original-format questions, scored by exact match
/// after normalization. Records are split across `workers` threads sharing
/// the read-only model; the report does not depend on the worker count.
template <typename T>
EvalReport evaluate(const MileModel<T>& model, const std::vector<QARecord>& records,
                    const std::filesystem::path& image_root, std::size_t max_len, std::size_t workers = 1);

/// Reads an evaluation file; rejects instruction-format lines (fields
/// `instruction` or `options`), since evaluation never offers candidates.
std::vector<QARecord> read_eval_records(const std::filesystem::path& path, const AttributeRules& rules);

}  // namespace mile
