#include "musedance/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <stdexcept>

namespace musedance {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kAmin = 1e-10;
constexpr double kTopDb = 80.0;
constexpr double kTightness = 100.0;
constexpr int kRefineBlock = 16;

std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t read_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
void put_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
void put_u16(std::ostream& os, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

double hz_to_mel(double f) {
    const double f_sp = 200.0 / 3.0;
    const double min_log_hz = 1000.0;
    const double min_log_mel = min_log_hz / f_sp;
    const double logstep = std::log(6.4) / 27.0;
    return f < min_log_hz ? f / f_sp : min_log_mel + std::log(f / min_log_hz) / logstep;
}

double mel_to_hz(double m) {
    const double f_sp = 200.0 / 3.0;
    const double min_log_hz = 1000.0;
    const double min_log_mel = min_log_hz / f_sp;
    const double logstep = std::log(6.4) / 27.0;
    return m < min_log_mel ? f_sp * m : min_log_hz * std::exp(logstep * (m - min_log_mel));
}

// Power spectra of Hann-windowed frames, (frames, n_fft/2 + 1).
Eigen::MatrixXd power_frames(std::span<const float> samples, bool centered) {
    const int n = static_cast<int>(samples.size());
    const int pad = centered ? kFftSize / 2 : 0;
    const int padded = n + 2 * pad;
    const int frames = padded >= kFftSize ? (padded - kFftSize) / kHop + 1 : 0;
    const int bins = kFftSize / 2 + 1;
    Eigen::MatrixXd power(frames, bins);
    if (frames == 0) return power;

    static std::mutex plan_mutex;
    double* in = fftw_alloc_real(kFftSize);
    fftw_complex* out = fftw_alloc_complex(bins);
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> lock(plan_mutex);
        plan = fftw_plan_dft_r2c_1d(kFftSize, in, out, FFTW_ESTIMATE);
    }
    std::vector<double> window(kFftSize);
    for (int i = 0; i < kFftSize; ++i) window[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / kFftSize);

    for (int f = 0; f < frames; ++f) {
        const int start = f * kHop - pad;
        for (int i = 0; i < kFftSize; ++i) {
            const int idx = start + i;
            in[i] = (idx >= 0 && idx < n) ? window[i] * samples[idx] : 0.0;
        }
        fftw_execute(plan);
        for (int b = 0; b < bins; ++b) power(f, b) = out[b][0] * out[b][0] + out[b][1] * out[b][1];
    }
    {
        std::lock_guard<std::mutex> lock(plan_mutex);
        fftw_destroy_plan(plan);
    }
    fftw_free(in);
    fftw_free(out);
    return power;
}

// Ellis dynamic-programming beat tracker over a smoothed onset score.
std::vector<int> track_beats(const std::vector<double>& env, double period) {
    const int n = static_cast<int>(env.size());
    double mean = std::accumulate(env.begin(), env.end(), 0.0) / n;
    double var = 0.0;
    for (double v : env) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / n);
    if (sd <= 0.0) return {};

    const int half = static_cast<int>(std::lround(period));
    std::vector<double> kernel(2 * half + 1);
    for (int j = -half; j <= half; ++j) {
        const double x = j * 32.0 / period;
        kernel[j + half] = std::exp(-0.5 * x * x);
    }
    std::vector<double> local(n, 0.0);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = -half; j <= half; ++j) {
            const int k = i - j;
            if (k >= 0 && k < n) acc += kernel[j + half] * env[k] / sd;
        }
        local[i] = acc;
    }

    const double max_local = *std::max_element(local.begin(), local.end());
    const double start_threshold = 0.01 * max_local;
    std::vector<double> cum(n, 0.0);
    std::vector<int> back(n, -1);
    const int lo_off = static_cast<int>(std::lround(2.0 * period));
    const int hi_off = static_cast<int>(std::lround(period / 2.0));
    bool started = false;
    for (int i = 0; i < n; ++i) {
        double best = -std::numeric_limits<double>::infinity();
        int best_j = -1;
        for (int j = std::max(0, i - lo_off); j <= i - hi_off; ++j) {
            const double lr = std::log(static_cast<double>(i - j) / period);
            const double score = cum[j] - kTightness * lr * lr;
            if (score > best) {
                best = score;
                best_j = j;
            }
        }
        if (!started && local[i] < start_threshold) {
            cum[i] = local[i];
            back[i] = -1;
            continue;
        }
        started = true;
        if (best_j >= 0 && best > 0.0) {
            cum[i] = local[i] + best;
            back[i] = best_j;
        } else {
            cum[i] = local[i];
            back[i] = -1;
        }
    }

    // Last beat: latest local maximum of the cumulative score, with a real onset,
    // above half the median peak.
    std::vector<int> peaks;
    for (int i = 0; i < n; ++i) {
        const bool left = i == 0 || cum[i] > cum[i - 1];
        const bool right = i == n - 1 || cum[i] >= cum[i + 1];
        if (left && right && local[i] >= start_threshold) peaks.push_back(i);
    }
    if (peaks.empty()) return {};
    std::vector<double> peak_values;
    for (int p : peaks) peak_values.push_back(cum[p]);
    std::nth_element(peak_values.begin(), peak_values.begin() + peak_values.size() / 2, peak_values.end());
    const double median = peak_values[peak_values.size() / 2];
    int last = peaks.back();
    for (auto it = peaks.rbegin(); it != peaks.rend(); ++it) {
        if (cum[*it] >= 0.5 * median) {
            last = *it;
            break;
        }
    }

    std::vector<int> beats;
    for (int b = last; b >= 0; b = back[b]) beats.push_back(b);
    std::reverse(beats.begin(), beats.end());

    // Trim weak beats at either end.
    double sq = 0.0;
    for (int b : beats) sq += local[b] * local[b];
    const double threshold = 0.5 * std::sqrt(sq / beats.size());
    std::size_t first = 0, end = beats.size();
    while (first < end && local[beats[first]] < threshold) ++first;
    while (end > first && local[beats[end - 1]] < threshold) --end;
    return {beats.begin() + static_cast<std::ptrdiff_t>(first), beats.begin() + static_cast<std::ptrdiff_t>(end)};
}

// Onset time in samples near a coarse onset frame. The 64-sample window with
// the largest energy rise over the preceding 64 samples locates the event;
// the onset is then the first sample whose magnitude clearly exceeds the
// level of the signal just before it.
double refine_onset(std::span<const float> samples, int frame) {
    const long n = static_cast<long>(samples.size());
    const long centre = static_cast<long>(frame) * kHop;
    const int span = 4 * kRefineBlock;
    auto energy = [&](long begin, long end) {
        double e = 0.0;
        for (long i = std::max(0L, begin); i < std::min(n, end); ++i) e += static_cast<double>(samples[i]) * samples[i];
        return e;
    };
    const long first_block = std::max(0L, (centre - 4 * kHop) / kRefineBlock);
    const long last_block = std::min((n - 1) / kRefineBlock, (centre + 4 * kHop) / kRefineBlock);
    long best_block = first_block;
    double best_rise = -std::numeric_limits<double>::infinity();
    for (long b = first_block; b <= last_block; ++b) {
        const long s = b * kRefineBlock;
        const double rise = std::log10(energy(s, s + span) + kAmin) - std::log10(energy(s - span, s) + kAmin);
        if (rise > best_rise) {
            best_rise = rise;
            best_block = b;
        }
    }
    const long coarse = best_block * kRefineBlock;
    const long base_end = coarse - span;
    const double base_rms = base_end > 0 ? std::sqrt(energy(base_end - span, base_end) / span) : 0.0;
    const double threshold = 4.0 * base_rms + 1e-6;
    for (long i = std::max(0L, coarse - span); i < std::min(n, coarse + span); ++i) {
        if (std::abs(samples[i]) > threshold) return static_cast<double>(i);
    }
    return static_cast<double>(coarse);
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_wav: cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw std::runtime_error("read_wav: not a RIFF/WAVE file: " + path.string());
    }
    bool have_fmt = false;
    Waveform w;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t size = read_u32(bytes.data() + pos + 4);
        const unsigned char* body = bytes.data() + pos + 8;
        if (pos + 8 + size > bytes.size()) throw std::runtime_error("read_wav: truncated chunk in " + path.string());
        if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0) {
            if (size < 16) throw std::runtime_error("read_wav: short fmt chunk");
            const auto format = read_u16(body);
            const auto channels = read_u16(body + 2);
            const auto rate = read_u32(body + 4);
            const auto bits = read_u16(body + 14);
            if (format != 1 || channels != 1 || bits != 16 || rate != kSampleRate) {
                throw std::runtime_error("read_wav: expected PCM16 mono 16 kHz: " + path.string());
            }
            have_fmt = true;
        } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
            if (!have_fmt) throw std::runtime_error("read_wav: data before fmt chunk");
            w.samples.resize(size / 2);
            for (std::size_t i = 0; i < w.samples.size(); ++i) {
                const auto v = static_cast<std::int16_t>(read_u16(body + 2 * i));
                w.samples[i] = static_cast<float>(v) / 32768.0f;
            }
            return w;
        }
        pos += 8 + size + (size & 1);
    }
    throw std::runtime_error("read_wav: no data chunk in " + path.string());
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
    if (w.sample_rate != kSampleRate) throw std::invalid_argument("write_wav: sample rate must be 16 kHz");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_wav: cannot open " + path.string());
    const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
    out.write("RIFF", 4);
    put_u32(out, 36 + data_bytes);
    out.write("WAVEfmt ", 8);
    put_u32(out, 16);
    put_u16(out, 1);
    put_u16(out, 1);
    put_u32(out, kSampleRate);
    put_u32(out, kSampleRate * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    out.write("data", 4);
    put_u32(out, data_bytes);
    for (float s : w.samples) {
        const double scaled = std::round(std::clamp(static_cast<double>(s), -1.0, 32767.0 / 32768.0) * 32768.0);
        put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
    }
    if (!out) throw std::runtime_error("write_wav: write failed for " + path.string());
}

Eigen::MatrixXd mel_filterbank(int n_mels, int n_fft, int sample_rate) {
    const int bins = n_fft / 2 + 1;
    const double mel_lo = hz_to_mel(0.0), mel_hi = hz_to_mel(sample_rate / 2.0);
    std::vector<double> edges(n_mels + 2);
    for (int i = 0; i < n_mels + 2; ++i) edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));
    Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_mels, bins);
    for (int m = 0; m < n_mels; ++m) {
        const double norm = 2.0 / (edges[m + 2] - edges[m]);
        for (int b = 0; b < bins; ++b) {
            const double f = static_cast<double>(b) * sample_rate / n_fft;
            const double lower = (f - edges[m]) / (edges[m + 1] - edges[m]);
            const double upper = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]);
            fb(m, b) = norm * std::max(0.0, std::min(lower, upper));
        }
    }
    return fb;
}

Eigen::MatrixXd log_mel_db(std::span<const float> samples, bool centered) {
    static const Eigen::MatrixXd fb = mel_filterbank();
    const Eigen::MatrixXd power = power_frames(samples, centered);
    Eigen::MatrixXd mel = power * fb.transpose();
    return (10.0 * mel.array().max(kAmin).log10()).matrix();
}

int music_token_count(std::size_t samples) {
    if (samples < static_cast<std::size_t>(kFftSize)) return 0;
    const int frames = static_cast<int>(samples / kHop) + 1;
    return (frames + kMusicPatchFrames - 1) / kMusicPatchFrames;
}

Eigen::MatrixXf music_patches(std::span<const float> samples) {
    if (samples.size() < static_cast<std::size_t>(kFftSize)) {
        throw std::invalid_argument("music_patches: clip shorter than one analysis window");
    }
    const Eigen::MatrixXd db = log_mel_db(samples, true);
    const int frames = static_cast<int>(db.rows());
    const int tokens = music_token_count(samples.size());
    const float silence = -1.0f;
    Eigen::MatrixXf out = Eigen::MatrixXf::Constant(tokens, kMusicPatchFrames * kMelBins, silence);
    for (int f = 0; f < frames; ++f) {
        const int tok = f / kMusicPatchFrames, slot = f % kMusicPatchFrames;
        for (int m = 0; m < kMelBins; ++m) {
            out(tok, slot * kMelBins + m) = static_cast<float>(std::max(db(f, m), -kTopDb) / 40.0 + 1.0);
        }
    }
    return out;
}

std::vector<double> onset_envelope(std::span<const float> samples) {
    Eigen::MatrixXd db = log_mel_db(samples, true);
    const int frames = static_cast<int>(db.rows());
    std::vector<double> env(frames, 0.0);
    if (frames == 0) return env;
    const double floor = db.maxCoeff() - kTopDb;
    db = db.array().max(floor).matrix();
    const double silence = std::max(floor, 10.0 * std::log10(kAmin));
    for (int f = 0; f < frames; ++f) {
        double acc = 0.0;
        for (int m = 0; m < kMelBins; ++m) {
            const double prev = f == 0 ? silence : db(f - 1, m);
            acc += std::max(0.0, db(f, m) - prev);
        }
        env[f] = acc / kMelBins;
    }
    // Windows that run past the end only see the truncation, not an onset.
    const long n = static_cast<long>(samples.size());
    for (int f = 0; f < frames; ++f) {
        if (static_cast<long>(f) * kHop + kFftSize / 2 > n) env[f] = 0.0;
    }
    return env;
}

double estimate_period(const std::vector<double>& env) {
    const int n = static_cast<int>(env.size());
    if (n == 0 || *std::max_element(env.begin(), env.end()) <= 0.0) return 0.0;
    const double frame_rate = static_cast<double>(kSampleRate) / kHop;
    const double lag_min = 60.0 * frame_rate / 180.0;
    const double lag_max = 60.0 * frame_rate / 60.0;
    // Gaussian smoothing (sigma 2 frames) evens out onsets that land at
    // different sub-frame phases.
    std::vector<double> smooth(n, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = -6; j <= 6; ++j) {
            if (i + j >= 0 && i + j < n) smooth[i] += std::exp(-0.125 * j * j) * env[i + j];
        }
    }
    // Autocorrelation at fractional lags, so a period and its double are
    // measured on equal terms.
    auto ac = [&](double lag) {
        const int whole = static_cast<int>(std::floor(lag));
        const double frac = lag - whole;
        double s = 0.0;
        for (int i = whole + 1; i < n; ++i) {
            const double shifted = (1.0 - frac) * smooth[i - whole] + frac * smooth[i - whole - 1];
            s += smooth[i] * shifted;
        }
        return s;
    };
    constexpr double kStep = 0.05;
    double best = lag_min;
    double best_score = -1.0;
    for (double lag = lag_min; lag <= lag_max + 1e-9; lag += kStep) {
        const double octaves = std::log2(60.0 * frame_rate / lag / 120.0);
        // The second harmonic separates a beat period from its double.
        const double score = (ac(lag) + 0.5 * ac(2.0 * lag)) * std::exp(-0.5 * octaves * octaves);
        if (score > best_score) {
            best_score = score;
            best = lag;
        }
    }
    return best;
}

std::vector<double> detect_beat_times(const Waveform& w) {
    if (w.sample_rate != kSampleRate) throw std::invalid_argument("detect_beat_times: sample rate must be 16 kHz");
    const std::vector<double> env = onset_envelope(w.samples);
    const double period = estimate_period(env);
    if (period <= 0.0) return {};
    std::vector<double> times;
    for (int f : track_beats(env, period)) {
        times.push_back(refine_onset(w.samples, f) / kSampleRate);
    }
    return times;
}

int quantize_to_frame(double seconds, double fps) {
    return static_cast<int>(std::ceil(seconds * fps - 0.5 - 1e-9));
}

BeatVector extract_beats(const Waveform& w, double fps, int K) {
    if (fps <= 0.0 || K < 1) throw std::invalid_argument("extract_beats: fps and K must be positive");
    const double needed = std::floor(static_cast<double>(K) / fps * w.sample_rate);
    if (static_cast<double>(w.samples.size()) < needed) {
        throw std::invalid_argument("extract_beats: waveform shorter than K / fps seconds");
    }
    BeatVector bits(K, 0);
    for (double t : detect_beat_times(w)) {
        const int f = quantize_to_frame(t, fps);
        if (f >= 0 && f < K) bits[f] = 1;
    }
    return bits;
}

}  // namespace musedance
