// Noise schedule, forward process, epsilon-prediction loss and DDIM sampling.
#pragma once

#include "musedance/autodiff.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace musedance {

using ad::GridShape;
using ad::Matrix;
using ad::Var;

struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;
};

NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

/// Default schedule used by training and sampling.
inline constexpr int kDefaultSteps = 100;
inline constexpr double kDefaultBetaStart = 1e-3;
inline constexpr double kDefaultBetaEnd = 0.2;
NoiseSchedule default_schedule();

/// frames == 0 marks a single frame (rank 3); frames >= 1 a clip (rank 4).
struct LatentShape {
    int frames = 0;
    int height = 0;
    int width = 0;
    int channels = 0;

    int rank() const { return frames == 0 ? 3 : 4; }
    int frame_count() const { return frames == 0 ? 1 : frames; }
    int rows() const { return frame_count() * height * width; }
    GridShape grid() const { return {frame_count(), height, width}; }
    bool operator==(const LatentShape&) const = default;
};

/// Rows are (frame, y, x) in row-major order, columns are latent channels.
template <typename T>
struct LatentTensor {
    LatentShape shape;
    Matrix<T> data;

    static LatentTensor zeros(const LatentShape& s) { return {s, Matrix<T>::Zero(s.rows(), s.channels)}; }
    bool all_finite() const { return data.allFinite(); }
    LatentTensor frame(int k) const;
};

template <typename T>
LatentTensor<T> stack_frames(const std::vector<LatentTensor<T>>& frames);

template <typename T>
LatentTensor<T> standard_normal(const LatentShape& shape, std::mt19937_64& rng);

template <typename T>
struct TextEmbedding {
    Var<T> tokens;  // (tokens, D_c)
    bool is_null = false;
};

template <typename T>
struct MusicEmbedding {
    Var<T> tokens;  // (L, D_c)
    bool is_null = false;
};

template <typename T>
struct BeatEmbedding {
    Var<T> rows;  // (K, D_c)
};

/// Pre-attention feature map of the reference image at every attention site.
template <typename T>
struct ReferenceFeatures {
    std::vector<Var<T>> sites;  // each (H_s*W_s, C_s)
};

/// Hidden states of the preceding frames at every attention site, position-major.
template <typename T>
struct MotionContext {
    int frames = 0;
    std::vector<Var<T>> sites;  // each (H_s*W_s*frames, C_s)
};

template <typename T>
struct ConditionBundle {
    std::optional<TextEmbedding<T>> text;
    std::optional<MusicEmbedding<T>> music;
    std::optional<BeatEmbedding<T>> beat;
    std::optional<ReferenceFeatures<T>> reference;
    std::optional<MotionContext<T>> motion;
    Var<T> input_residual;  // added to z_t before the first convolution; may be null
};

template <typename T>
class Denoiser {
  public:
    virtual ~Denoiser() = default;
    virtual Var<T> predict_noise(const Var<T>& z_t, const LatentShape& shape, int t,
                                 const ConditionBundle<T>& cond) const = 0;
    virtual std::optional<TextEmbedding<T>> null_text() const { return std::nullopt; }
    virtual std::optional<MusicEmbedding<T>> null_music() const { return std::nullopt; }
};

template <typename T>
LatentTensor<T> forward_diffuse(const LatentTensor<T>& z0, int t, const LatentTensor<T>& eps,
                                const NoiseSchedule& sched);

template <typename T>
struct TrainingItem {
    LatentTensor<T> z0;
    ConditionBundle<T> cond;
};

/// Mean over the batch of the per-item epsilon MSE. Text and music are each
/// replaced by the denoiser's null embedding with probability drop_prob.
template <typename T>
Var<T> denoising_loss(const Denoiser<T>& denoiser, std::span<const TrainingItem<T>> batch,
                      const NoiseSchedule& sched, double drop_prob, std::mt19937_64& rng);

/// Unconditional branch for guidance: droppable conditions become null.
template <typename T>
ConditionBundle<T> null_conditions(const Denoiser<T>& denoiser, const ConditionBundle<T>& cond);

/// Evenly strided descending subsequence starting at T-1 and ending at 0.
std::vector<int> ddim_timesteps(int T, int steps);

struct SamplerOptions {
    int steps = 25;
    double guidance_scale = 3.5;
    std::uint64_t seed = 0;
};

template <typename T>
using StepObserver = std::function<void(int t, const LatentTensor<T>& z_t)>;

template <typename T>
LatentTensor<T> ddim_sample(const Denoiser<T>& denoiser, const ConditionBundle<T>& cond,
                            const NoiseSchedule& sched, const LatentShape& shape,
                            const SamplerOptions& options, const StepObserver<T>& observer = {});

/// DDIM from a given starting latent at timestep sequence[0].
template <typename T>
LatentTensor<T> ddim_run(const Denoiser<T>& denoiser, const ConditionBundle<T>& cond,
                         const NoiseSchedule& sched, LatentTensor<T> z, const std::vector<int>& sequence,
                         double guidance_scale, const StepObserver<T>& observer = {});

}  // namespace musedance
