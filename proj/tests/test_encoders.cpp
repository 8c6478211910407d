#include "musedance/dataset.hpp"
#include "musedance/encoders.hpp"

#include <doctest.h>

#include <random>

using namespace musedance;

namespace {

const LatentShape kFrame{0, 16, 16, 48};

Image filled_mask(float v) { return Image(64, 64, 1, v); }

}  // namespace

TEST_CASE("mask encoder starts at zero and has latent shape") {
    ParamStore<double> store(3);
    MaskEncoder<double> enc(store, 4, 48);
    ClipSpec spec;
    auto masks = synth_video(spec).masks;
    auto out = enc({masks[0]}, kFrame);
    CHECK(out->value.rows() == 256);
    CHECK(out->value.cols() == 48);
    CHECK(out->value.isZero(0.0));

    LatentShape clip{3, 16, 16, 48};
    auto clip_out = enc({masks[0], masks[1], masks[2]}, clip);
    CHECK(clip_out->value.rows() == 768);

    // seeded nonzero final layer: masks now matter
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n01(0, 0.1);
    auto w = store.find("mask.out.w")->var;
    for (Eigen::Index i = 0; i < w->value.size(); ++i) w->value.data()[i] = n01(rng);
    auto a = enc({filled_mask(1.0f)}, kFrame)->value;
    auto b = enc({filled_mask(0.0f)}, kFrame)->value;
    CHECK((a - b).norm() > 1e-3);
    CHECK(enc({filled_mask(1.0f)}, kFrame)->value == a);

    CHECK_THROWS_AS(enc({Image(32, 32, 1)}, kFrame), std::invalid_argument);
    CHECK_THROWS_AS(enc({Image(64, 64, 3)}, kFrame), std::invalid_argument);
    CHECK_THROWS_AS(enc({masks[0], masks[1]}, kFrame), std::invalid_argument);
    CHECK(store.count(ParamGroup::mask_encoder) > 0);
    CHECK(store.count(ParamGroup::conv) == 0);
}

TEST_CASE("mask residual is elementwise addition") {
    std::mt19937_64 rng(4);
    auto z = standard_normal<double>(kFrame, rng);
    auto f = standard_normal<double>(kFrame, rng);
    auto zero = LatentTensor<double>::zeros(kFrame);
    CHECK(apply_mask_residual(z, zero).data == z.data);
    CHECK(apply_mask_residual(zero, f).data == f.data);
    CHECK((apply_mask_residual(apply_mask_residual(z, f), f).data - (z.data + 2.0 * f.data)).cwiseAbs().maxCoeff() <
          1e-12);
    CHECK_THROWS_AS(apply_mask_residual(z, LatentTensor<double>::zeros({0, 8, 8, 48})), std::invalid_argument);
}

TEST_CASE("text encoder contracts") {
    ParamStore<float> store(5);
    TextEncoder<float> enc(store, Vocabulary::standard());
    const auto cap = split_tokens("the figure spins around in place to the music");
    auto a = enc(cap);
    CHECK_FALSE(a.is_null);
    CHECK(a.tokens->value.rows() == static_cast<Eigen::Index>(cap.size()));
    CHECK(a.tokens->value.cols() == kConditionWidth);
    CHECK(enc(cap).tokens->value == a.tokens->value);

    auto other = cap;
    other[2] = "bounces";
    CHECK((enc(other).tokens->value - a.tokens->value).norm() > 1e-4f);

    auto unk = cap;
    unk[2] = "pirouettes";
    CHECK(Vocabulary::standard().id("pirouettes") == 0);
    CHECK(enc(unk).tokens->value.allFinite());

    auto empty = enc({});
    CHECK(empty.is_null);
    CHECK(empty.tokens->value.rows() == 1);
    CHECK(empty.tokens.get() == enc.null_embedding().tokens.get());
    CHECK_THROWS_AS(enc(std::vector<std::string>(kMaxTextTokens + 1, "the")), std::invalid_argument);

    // every template caption fits and is fully in-vocabulary
    for (auto m : {MotionType::bounce, MotionType::sway, MotionType::spin}) {
        ClipSpec s;
        s.motion = m;
        for (const auto& tok : make_caption(s)) CHECK(enc.vocabulary().id(tok) != 0);
    }
}

TEST_CASE("music encoder contracts") {
    ParamStore<float> store(6);
    MusicEncoder<float> enc(store);
    auto w = synth_audio(120, 4.0);
    auto e = enc(w, 4.0);
    CHECK(e.tokens->value.rows() == 32);
    CHECK(e.tokens->value.cols() == kConditionWidth);
    CHECK(enc(w, 2.0).tokens->value.rows() == 16);  // 126 frames

    Waveform silent;
    silent.samples.assign(64000, 0.0f);
    auto s1 = enc(silent, 4.0).tokens->value;
    CHECK(s1 == enc(silent, 4.0).tokens->value);
    CHECK(s1.allFinite());
    CHECK((s1 - e.tokens->value).norm() > 1e-3f);

    CHECK_THROWS_AS(enc(w, 5.0), std::invalid_argument);
    CHECK_THROWS_AS(enc(w, 0.05), std::invalid_argument);
    CHECK(enc.null_embedding().is_null);
}

TEST_CASE("beat embedding is a lookup") {
    ParamStore<double> store(8);
    BeatEmbedder<double> emb(store);
    const auto& table = emb.table()->value;

    auto z = emb(BeatVector(12, 0)).rows->value;
    CHECK(z.rows() == 12);
    CHECK(z.cols() == kConditionWidth);
    for (int i = 0; i < 12; ++i) CHECK(z.row(i) == table.row(0));

    BeatVector a = beat_grid(120, 12, 48);
    BeatVector b = a;
    b[7] = 1;
    auto ea = emb(a).rows->value, eb = emb(b).rows->value;
    for (int i = 0; i < 48; ++i) CHECK((ea.row(i) == eb.row(i)) == (i != 7));

    std::mt19937 rng(2);
    std::vector<int> perm(48);
    for (int i = 0; i < 48; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    BeatVector pa(48);
    for (int i = 0; i < 48; ++i) pa[i] = a[perm[i]];
    auto ep = emb(pa).rows->value;
    for (int i = 0; i < 48; ++i) CHECK(ep.row(i) == ea.row(perm[i]));

    CHECK_THROWS_AS(emb(BeatVector{0, 2, 1}), std::invalid_argument);
    CHECK_THROWS_AS(emb(BeatVector{}), std::invalid_argument);
    CHECK(store.count(ParamGroup::temporal_beat) == 2 * kConditionWidth);
}
