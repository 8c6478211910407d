#include "musedance/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace musedance {

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
        throw std::invalid_argument("make_schedule: need 0 < beta_start <= beta_end < 1");
    }
    NoiseSchedule s;
    s.T = T;
    s.betas.resize(T);
    s.alphas.resize(T);
    s.alpha_bars.resize(T);
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(T - 1);
        s.betas[t] = t == T - 1 ? beta_end : beta_start + (beta_end - beta_start) * frac;
        s.alphas[t] = 1.0 - s.betas[t];
        prod *= s.alphas[t];
        s.alpha_bars[t] = prod;
    }
    return s;
}

NoiseSchedule default_schedule() { return make_schedule(kDefaultSteps, kDefaultBetaStart, kDefaultBetaEnd); }

template <typename T>
LatentTensor<T> LatentTensor<T>::frame(int k) const {
    if (k < 0 || k >= shape.frame_count()) throw std::invalid_argument("LatentTensor::frame: index out of range");
    LatentShape s = shape;
    s.frames = 0;
    const int rows = s.rows();
    return {s, data.middleRows(static_cast<Eigen::Index>(k) * rows, rows)};
}

template <typename T>
LatentTensor<T> stack_frames(const std::vector<LatentTensor<T>>& frames) {
    if (frames.empty()) throw std::invalid_argument("stack_frames: no frames");
    LatentShape s = frames.front().shape;
    int total = 0;
    for (const auto& f : frames) {
        LatentShape fs = f.shape;
        fs.frames = s.frames;
        if (!(fs == s)) throw std::invalid_argument("stack_frames: inconsistent frame shapes");
        total += f.shape.frame_count();
    }
    s.frames = total;
    LatentTensor<T> out = LatentTensor<T>::zeros(s);
    Eigen::Index row = 0;
    for (const auto& f : frames) {
        out.data.middleRows(row, f.data.rows()) = f.data;
        row += f.data.rows();
    }
    return out;
}

template <typename T>
LatentTensor<T> standard_normal(const LatentShape& shape, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    LatentTensor<T> out = LatentTensor<T>::zeros(shape);
    for (Eigen::Index i = 0; i < out.data.size(); ++i) out.data.data()[i] = static_cast<T>(dist(rng));
    return out;
}

template <typename T>
LatentTensor<T> forward_diffuse(const LatentTensor<T>& z0, int t, const LatentTensor<T>& eps,
                                const NoiseSchedule& sched) {
    if (t < 0 || t >= sched.T) throw std::invalid_argument("forward_diffuse: t out of range");
    if (!(z0.shape == eps.shape) || z0.data.rows() != eps.data.rows() || z0.data.cols() != eps.data.cols()) {
        throw std::invalid_argument("forward_diffuse: shape mismatch");
    }
    const double ab = sched.alpha_bars[t];
    LatentTensor<T> out{z0.shape, {}};
    out.data = static_cast<T>(std::sqrt(ab)) * z0.data + static_cast<T>(std::sqrt(1.0 - ab)) * eps.data;
    return out;
}

template <typename T>
Var<T> denoising_loss(const Denoiser<T>& denoiser, std::span<const TrainingItem<T>> batch,
                      const NoiseSchedule& sched, double drop_prob, std::mt19937_64& rng) {
    if (batch.empty()) throw std::invalid_argument("denoising_loss: empty batch");
    if (!(drop_prob >= 0.0 && drop_prob < 1.0)) throw std::invalid_argument("denoising_loss: drop_prob must be in [0,1)");
    std::uniform_int_distribution<int> pick_t(0, sched.T - 1);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const auto null_text = denoiser.null_text();
    const auto null_music = denoiser.null_music();

    std::vector<Var<T>> losses;
    losses.reserve(batch.size());
    for (const auto& item : batch) {
        const int t = pick_t(rng);
        const LatentTensor<T> eps = standard_normal<T>(item.z0.shape, rng);
        const LatentTensor<T> zt = forward_diffuse(item.z0, t, eps, sched);
        ConditionBundle<T> cond = item.cond;
        // Both coins are always drawn so the random stream does not depend on which conditions exist.
        const bool drop_text = coin(rng) < drop_prob;
        const bool drop_music = coin(rng) < drop_prob;
        if (drop_text && cond.text && null_text) cond.text = null_text;
        if (drop_music && cond.music && null_music) cond.music = null_music;
        auto pred = denoiser.predict_noise(ad::constant(zt.data), zt.shape, t, cond);
        losses.push_back(ad::mse(pred, ad::constant(eps.data)));
    }
    return ad::scale(ad::sum_scalars(losses), static_cast<T>(1.0 / static_cast<double>(losses.size())));
}

template <typename T>
ConditionBundle<T> null_conditions(const Denoiser<T>& denoiser, const ConditionBundle<T>& cond) {
    ConditionBundle<T> out = cond;
    if (out.text) {
        auto n = denoiser.null_text();
        if (n) {
            out.text = n;
        } else {
            out.text.reset();
        }
    }
    if (out.music) {
        auto n = denoiser.null_music();
        if (n) {
            out.music = n;
        } else {
            out.music.reset();
        }
    }
    return out;
}

std::vector<int> ddim_timesteps(int T, int steps) {
    if (steps < 1 || steps > T) throw std::invalid_argument("ddim_timesteps: need 1 <= steps <= T");
    std::vector<int> seq(steps);
    if (steps == 1) {
        seq[0] = T - 1;
        return seq;
    }
    for (int i = 0; i < steps; ++i) {
        const double pos = static_cast<double>(T - 1) * static_cast<double>(steps - 1 - i) / static_cast<double>(steps - 1);
        seq[i] = static_cast<int>(std::lround(pos));
    }
    return seq;
}

template <typename T>
LatentTensor<T> ddim_run(const Denoiser<T>& denoiser, const ConditionBundle<T>& cond,
                         const NoiseSchedule& sched, LatentTensor<T> z, const std::vector<int>& sequence,
                         double guidance_scale, const StepObserver<T>& observer) {
    if (guidance_scale < 0.0) throw std::invalid_argument("ddim_sample: guidance_scale must be >= 0");
    const bool guided = guidance_scale != 1.0;
    const ConditionBundle<T> uncond = guided ? null_conditions(denoiser, cond) : ConditionBundle<T>{};
    for (std::size_t i = 0; i < sequence.size(); ++i) {
        const int t = sequence[i];
        if (observer) observer(t, z);
        auto zt = ad::constant(z.data);
        Matrix<T> eps = denoiser.predict_noise(zt, z.shape, t, cond)->value;
        if (guided) {
            const Matrix<T> eps_u = denoiser.predict_noise(zt, z.shape, t, uncond)->value;
            eps = eps_u + static_cast<T>(guidance_scale) * (eps - eps_u);
        }
        const double ab = sched.alpha_bars[t];
        const double ab_prev = i + 1 < sequence.size() ? sched.alpha_bars[sequence[i + 1]] : 1.0;
        const Matrix<T> x0 = (z.data - static_cast<T>(std::sqrt(1.0 - ab)) * eps) / static_cast<T>(std::sqrt(ab));
        z.data = static_cast<T>(std::sqrt(ab_prev)) * x0 + static_cast<T>(std::sqrt(1.0 - ab_prev)) * eps;
    }
    return z;
}

template <typename T>
LatentTensor<T> ddim_sample(const Denoiser<T>& denoiser, const ConditionBundle<T>& cond,
                            const NoiseSchedule& sched, const LatentShape& shape,
                            const SamplerOptions& options, const StepObserver<T>& observer) {
    if (options.steps > sched.T) throw std::invalid_argument("ddim_sample: steps > T");
    const auto sequence = ddim_timesteps(sched.T, options.steps);
    std::mt19937_64 rng(options.seed);
    LatentTensor<T> z = standard_normal<T>(shape, rng);
    return ddim_run(denoiser, cond, sched, std::move(z), sequence, options.guidance_scale, observer);
}

#define MUSEDANCE_INSTANTIATE(T)                                                                          \
    template struct LatentTensor<T>;                                                                      \
    template LatentTensor<T> stack_frames(const std::vector<LatentTensor<T>>&);                          \
    template LatentTensor<T> standard_normal(const LatentShape&, std::mt19937_64&);                       \
    template LatentTensor<T> forward_diffuse(const LatentTensor<T>&, int, const LatentTensor<T>&,         \
                                             const NoiseSchedule&);                                       \
    template Var<T> denoising_loss(const Denoiser<T>&, std::span<const TrainingItem<T>>,                  \
                                   const NoiseSchedule&, double, std::mt19937_64&);                      \
    template ConditionBundle<T> null_conditions(const Denoiser<T>&, const ConditionBundle<T>&);           \
    template LatentTensor<T> ddim_run(const Denoiser<T>&, const ConditionBundle<T>&, const NoiseSchedule&, \
                                      LatentTensor<T>, const std::vector<int>&, double,                   \
                                      const StepObserver<T>&);                                            \
    template LatentTensor<T> ddim_sample(const Denoiser<T>&, const ConditionBundle<T>&,                   \
                                         const NoiseSchedule&, const LatentShape&, const SamplerOptions&, \
                                         const StepObserver<T>&);

MUSEDANCE_INSTANTIATE(float)
MUSEDANCE_INSTANTIATE(double)

}  // namespace musedance
