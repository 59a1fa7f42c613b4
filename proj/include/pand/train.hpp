#pragma once

#include "pand/anchors.hpp"
#include "pand/config.hpp"
#include "pand/data.hpp"
#include "pand/encoders.hpp"
#include "pand/eval.hpp"
#include "pand/losses.hpp"
#include "pand/metrics.hpp"
#include "pand/optim.hpp"
#include "pand/student.hpp"
#include "pand/teacher.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace pand {

/// Frozen encoder pair plus the two vocabularies it understands: hashed bare
/// class names (the learnable-prompt suffix) and hand-written template
/// prompts (the zero-shot / ablation baseline).
struct VlmBundle {
  std::unique_ptr<EncoderPair<float>> pair;
  ClassVocabularyT<float> vocab;
  ClassVocabularyT<float> template_vocab;
};

struct PipelineResult {
  SemanticAnchors anchors;
  std::optional<StudentModel<float>> student;
  MetricsLog psc_log;
  MetricsLog nsd_log;
  double teacher_top1 = 0;   // held-out, through the anchors
  double student_top1 = 0;   // held-out
  double consistency = -1;   // mean JS vs teacher on held-out, -1 when unset
  std::uint64_t config_hash = 0;
};

/// Dataset per config: `toy` generates clusters, `folder` ingests a class
/// directory tree, `container` reloads previously saved splits. For the
/// non-toy kinds an empty data.root falls back to $PAND_DATA_ROOT.
ToySplits build_dataset(const Config& cfg);

/// Seeded toy VLM with its alignment readout pretrained on the train split.
VlmBundle build_vlm(const Config& cfg, const DatasetSplit& train);

/// Checks the cross-module constraints a bare key registry cannot see
/// (e.g. the neighborhood size against the class count).
void validate_config(const Config& cfg);

/// LossWeights at one epoch; the `linear` schedule interpolates each lambda
/// toward its *_end value across the stage, `fixed` ignores the ends.
LossWeights weights_at(const Config& cfg, int epoch, int total_epochs);

/// Stage-PSC per config (learned anchors or fixed-template anchors),
/// appending one record per epoch to the log.
SemanticAnchors stage_psc(const Config& cfg, const ToySplits& data, const VlmBundle& bundle,
                          MetricsLog& log);

/// Stage-NSD: cosine-annealed AdamW over the student only, total loss =
/// base + lambda_nsd * structural term (skipped when the lambda is zero).
/// Appends one record per epoch; the test split drives the top-1 column.
/// The optimizer is owned by the caller so its state can be checkpointed.
void run_nsd_stage(const Config& cfg, const ToySplits& data, const TeacherOutputT<float>& t_train,
                   const SemanticAnchors& anchors, StudentModel<float>& student,
                   AdamW<float>& opt, MetricsLog& log);

/// The same loop with the structural path absent: no neighborhoods, no
/// relation distributions, base loss only. Exists so the lambda=0 sweep row
/// can be checked bit-for-bit against code that cannot touch NSD.
void run_baseline_stage(const Config& cfg, const ToySplits& data,
                        const TeacherOutputT<float>& t_train, const SemanticAnchors& anchors,
                        StudentModel<float>& student, AdamW<float>& opt, MetricsLog& log);

/// Both stages end to end. `preset_anchors` (from a calibrate run) skips
/// Stage-PSC. When `persist` is set, non-empty paths.* entries receive the
/// anchors, the final checkpoint, and the metrics log. Encoder and anchor
/// hashes are asserted unchanged across Stage-NSD.
PipelineResult run_pipeline(const Config& cfg, bool persist = false,
                            const SemanticAnchors* preset_anchors = nullptr);

/// Student + optimizer snapshot in the named-tensor container, with the
/// resolved config echoed into the metadata.
void save_checkpoint(const std::string& path, StudentModel<float>& student,
                     AdamW<float>* opt, int epoch, const Config& cfg);

struct CheckpointState {
  StudentModel<float> student;
  std::vector<Vec<float>> adam_m;
  std::vector<Vec<float>> adam_v;
  long long adam_step = 0;
  int epoch = 0;
  std::string config_echo;
};

CheckpointState load_checkpoint(const std::string& path);

}  // namespace pand
