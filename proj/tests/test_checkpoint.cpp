#include "mapl/checkpoint.hpp"
#include "mapl/error.hpp"
#include "mapl/synthetic.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstring>

using namespace mapl;
using namespace mapl::ckpt;

namespace {

config::RunConfig tiny_run() {
    config::RunConfig c = config::parse(R"(
[dataset]
image_size = 32
[train]
steps = 3
warmup_steps = 1
batch_size = 4
memory_N = 3
labeler_refresh_every = 2
labeler_pool = 12
normal_pool = 8
projection_dims = 4
gmm_components = 1
base_width = 2
predictor_hidden = 4
seed = 3
)");
    return c;
}

struct Fixture {
    config::RunConfig cfg = tiny_run();
    synth::Corpus corpus;
    train::TrainResult result;
    Archive archive;

    Fixture() {
        synth::CorpusSpec spec;
        spec.size = 32;
        spec.train_normals = 8;
        spec.test_normals = 1;
        spec.test_anomalous = 1;
        spec.textures = 3;
        corpus = synth::make_corpus(spec);
        result = train::train({corpus.train, corpus.textures, {}}, cfg.train, cfg.simulate, cfg.loss);
        archive = pack(cfg, result.state.model, result.state.bank, &*result.state.labeler, result.state.step,
                       log_digest(result.log));
    }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

std::string error_of(std::string_view bytes) {
    try {
        deserialize(bytes, "test.ckpt");
    } catch (const CheckpointError& e) {
        return e.what();
    }
    return "";
}

std::uint64_t header_len(const std::string& bytes) {
    std::uint64_t n = 0;
    std::memcpy(&n, bytes.data() + 12, 8);
    return n;
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
    const auto& f = fixture();
    const std::string a = serialize(f.archive);
    const Archive back = deserialize(a);
    EXPECT_EQ(serialize(back), a);

    const Restored r = unpack(back);
    const Archive again = pack(r.config, r.model, r.bank, r.labeler ? &*r.labeler : nullptr, r.step, r.log_digest);
    EXPECT_EQ(serialize(again), a);
    EXPECT_EQ(r.step, 3);
    EXPECT_EQ(r.log_digest, log_digest(f.result.log));
    EXPECT_EQ(config::to_text(r.config), config::to_text(f.cfg));
}

TEST(Checkpoint, RestoredModelPredictsIdentically) {
    const auto& f = fixture();
    const Restored r = unpack(deserialize(serialize(f.archive)));
    const Image& img = f.corpus.test[0].image;
    const auto p0 = f.result.state.model.forward(img, f.result.state.bank);
    const auto p1 = r.model.forward(img, r.bank);
    EXPECT_EQ(p0.q, p1.q);
    EXPECT_EQ(p0.seg.values, p1.seg.values);
    ASSERT_TRUE(r.labeler.has_value());
    EXPECT_EQ(r.labeler->labeler.eta_p, f.result.state.labeler->labeler.eta_p);
    EXPECT_EQ(r.labeler->labeler.eta_n, f.result.state.labeler->labeler.eta_n);
    EXPECT_EQ(r.labeler->refreshed_at, f.result.state.labeler->refreshed_at);
    const auto z = f.result.state.model.encode(img).latent;
    EXPECT_EQ(r.labeler->labeler.scores(z), f.result.state.labeler->labeler.scores(z));
}

TEST(Checkpoint, FileRoundTrip) {
    const auto& f = fixture();
    mapl::testing::TempDir dir("ckpt");
    write_file(f.archive, dir / "m.ckpt");
    EXPECT_EQ(serialize(read_file(dir / "m.ckpt")), serialize(f.archive));
    EXPECT_THROW(read_file(dir / "absent.ckpt"), Error);
}

TEST(Checkpoint, VersionMismatchDetectedBeforeArrays) {
    std::string bytes = serialize(fixture().archive);
    const std::uint32_t v = kFormatVersion + 1;
    std::memcpy(bytes.data() + 8, &v, 4);
    // Wreck everything after the version too; only the version may be reported.
    for (std::size_t i = 12; i < bytes.size(); ++i) bytes[i] = '\xff';
    const std::string e = error_of(bytes);
    EXPECT_NE(e.find("version"), std::string::npos) << e;
    EXPECT_NE(e.find("test.ckpt"), std::string::npos) << e;
}

TEST(Checkpoint, BadMagic) {
    std::string bytes = serialize(fixture().archive);
    bytes[0] = 'X';
    EXPECT_NE(error_of(bytes).find("not a checkpoint"), std::string::npos);
}

TEST(Checkpoint, PayloadCorruptionDetected) {
    const std::string good = serialize(fixture().archive);
    const std::size_t payload = 20 + header_len(good);
    for (std::size_t pos : {payload, payload + 7, good.size() - 1, payload + (good.size() - payload) / 2}) {
        std::string bad = good;
        bad[pos] = static_cast<char>(bad[pos] ^ 0x10);
        EXPECT_FALSE(error_of(bad).empty()) << "flip at " << pos;
    }
}

TEST(Checkpoint, HeaderCorruptionDetected) {
    const std::string good = serialize(fixture().archive);
    std::string bad = good;
    bad[20] = '#';  // JSON no longer parses
    EXPECT_FALSE(error_of(bad).empty());
    bad = good;
    const std::uint64_t huge = ~std::uint64_t{0} / 2;
    std::memcpy(bad.data() + 12, &huge, 8);
    EXPECT_FALSE(error_of(bad).empty());
}

TEST(Checkpoint, AnyTruncationDetected) {
    const std::string good = serialize(fixture().archive);
    for (std::size_t n = 0; n < good.size(); n += 1 + n / 7) EXPECT_FALSE(error_of(good.substr(0, n)).empty()) << n;
    EXPECT_FALSE(error_of(good + "x").empty());
}

TEST(Checkpoint, ParameterShapeMismatchRejected) {
    const auto& f = fixture();
    Archive a = f.archive;
    auto it = std::find_if(a.arrays.begin(), a.arrays.end(), [](const NamedArray& x) { return x.name.starts_with("params/"); });
    ASSERT_NE(it, a.arrays.end());
    it->shape.back() += 1;
    it->data.resize(it->data.size() / (it->shape.back() - 1) * it->shape.back());
    EXPECT_THROW(unpack(deserialize(serialize(a))), CheckpointError);

    Archive missing = f.archive;
    missing.arrays.erase(std::find_if(missing.arrays.begin(), missing.arrays.end(),
                                      [](const NamedArray& x) { return x.name.starts_with("params/"); }));
    EXPECT_THROW(unpack(missing), CheckpointError);

    Archive extra = f.archive;
    extra.arrays.push_back({"params/nonexistent.weight", {1}, {0.0}});
    EXPECT_THROW(unpack(extra), CheckpointError);
}

TEST(Checkpoint, ConfigHashMismatchRejected) {
    Archive a = fixture().archive;
    a.config_hash = "0000000000000000";
    EXPECT_THROW(unpack(a), CheckpointError);
    EXPECT_THROW(a.get("no/such/array"), CheckpointError);
}
