// Two-stage training, run configuration and chunked generation.
#pragma once

#include "musedance/dataset.hpp"
#include "musedance/model.hpp"

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace musedance {

struct TrainConfig {
    int stage = 1;
    int steps = 1000;
    int batch_size = 1;
    double lr = 1e-5;
    int window = 12;  // w
    int K = 16;
    double drop_prob = 0.05;
    double mask_drop_prob = 0.1;
    std::uint64_t seed = 0;
    int checkpoint_every = 0;  // 0 disables intermediate checkpoints

    void validate() const;
};

struct SampleConfig {
    int steps = 25;
    double guidance = 3.5;
};

/// Everything a config file can set.
struct RunConfig {
    TrainConfig train;
    SampleConfig sample;
    int context_frames = 2;  // model.context_frames
};

/// Flat `key = value` lines, '#' starts a comment. Unknown keys, malformed
/// values and duplicates throw std::invalid_argument.
RunConfig parse_config(std::string_view text);
RunConfig read_config(const std::filesystem::path& path);
std::string format_config(const RunConfig& cfg);

/// 1-indexed (reference i, target j): i uniform on [w+1, N-w], j uniform on
/// [i-w, i+w] without i, so both stay in [1, N]. Throws std::invalid_argument
/// unless N >= 2w + 1.
std::pair<int, int> sample_frame_pair(int n_frames, int w, std::mt19937_64& rng);

/// Adam on every parameter whose requires_grad is set.
template <typename T>
class Adam {
  public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(ParamStore<T>& store);
    int steps_taken() const { return t_; }

  private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::vector<Matrix<T>> m_, v_;
};

struct StepLog {
    int step = 0;
    double loss = 0;
    double lr = 0;
    double elapsed_ms = 0;
};

using StepCallback = std::function<void(const StepLog&)>;

/// Tab-separated `step loss lr elapsed_ms`.
std::string format_step(const StepLog& log);

struct TrainResult {
    std::vector<double> losses;
};

/// Stage 1 on single frames. `model` must be a stage-1 model. With
/// checkpoint_every > 0 and a non-empty `checkpoint_dir`, writes step_<n>.ckpt there.
TrainResult train_stage1(MuseDanceModel<float>& model, const std::vector<VideoClip>& clips, const TrainConfig& cfg,
                         const StepCallback& on_step = {}, const std::filesystem::path& checkpoint_dir = {});

/// Stage 2 on K-frame windows. `model` must be temporal and already hold the
/// stage-1 weights; every non-temporal group except the music encoder is frozen.
TrainResult train_stage2(MuseDanceModel<float>& model, const std::vector<VideoClip>& clips, const TrainConfig& cfg,
                         const StepCallback& on_step = {}, const std::filesystem::path& checkpoint_dir = {});

/// Groups trained in stage 2.
bool trained_in_stage2(ParamGroup g);

struct GenerateOptions {
    int K = 16;
    int steps = 25;
    double guidance = 3.5;
    std::uint64_t seed = 0;
    double fps = 12.0;
};

struct GenerationResult {
    std::vector<Image> frames;                        // exactly `length`
    std::vector<LatentTensor<float>> chunk_latents;   // each K frames, before decoding
    std::vector<MotionContext<float>> contexts;       // context consumed by each chunk (frames = 0 for the first)
    BeatVector beats;                                 // beat vector of the generated span, length `length`
};

/// Chunked DDIM generation. Chunk c covers frames [cK, cK+K) with its own
/// music and beat segment and the last M clean latents of chunk c-1 as
/// motion context. The waveform must cover length/fps seconds; the last
/// chunk's audio is zero-padded past that.
GenerationResult generate_video(const MuseDanceModel<float>& model, const Image& ref, const Image& ref_mask,
                                const Waveform& w, const std::vector<std::string>& caption, int length,
                                const GenerateOptions& opt);

/// Stage-1 reconstruction of one frame: DDIM from noise conditioned on a
/// reference frame, the target's mask and the caption.
Image reconstruct_frame(const MuseDanceModel<float>& model, const Image& ref, const Image& ref_mask,
                        const Image& target_mask, const std::vector<std::string>& caption, int steps,
                        double guidance, std::uint64_t seed);

/// Per-frame feature rows for the Frechet distance. With a model: the
/// ReferenceNet mid-site feature map, mean-pooled (128-d). Without: latent
/// channels averaged over positions (48-d).
Eigen::MatrixXd frame_features(const std::vector<Image>& frames, const MuseDanceModel<float>* model,
                               const CodecConfig& codec);

}  // namespace musedance
