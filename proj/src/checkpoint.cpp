#include "mapl/checkpoint.hpp"

#include "mapl/error.hpp"
#include "mapl/rng.hpp"

#include "json.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mapl::ckpt {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'A', 'P', 'L', 'C', 'K', 'P', 'T'};

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T take(std::string_view bytes, std::size_t at) {
    T v;
    std::memcpy(&v, bytes.data() + at, sizeof(T));
    return v;
}

std::int64_t element_count(const std::vector<std::int64_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

NamedArray tensor_array(std::string name, const Tensor& t) {
    return {std::move(name), {t.channels, t.height, t.width}, t.data};
}

NamedArray scalar_array(std::string name, double v) { return {std::move(name), {1}, {v}}; }

Tensor to_tensor(const NamedArray& a) {
    if (a.shape.size() != 3) throw CheckpointError(a.name + ": expected a rank-3 array");
    Tensor t(static_cast<int>(a.shape[0]), static_cast<int>(a.shape[1]), static_cast<int>(a.shape[2]));
    t.data = a.data;
    return t;
}

std::vector<double> expect_vector(const NamedArray& a, std::int64_t n) {
    if (a.shape.size() != 1 || a.shape[0] != n)
        throw CheckpointError(a.name + ": expected " + std::to_string(n) + " values");
    return a.data;
}

}  // namespace

bool Archive::has(std::string_view name) const {
    return std::any_of(arrays.begin(), arrays.end(), [&](const NamedArray& a) { return a.name == name; });
}

const NamedArray& Archive::get(std::string_view name) const {
    for (const auto& a : arrays)
        if (a.name == name) return a;
    throw CheckpointError("missing array '" + std::string(name) + "'");
}

std::string serialize(const Archive& a) {
    std::string payload;
    nlohmann::json arrays = nlohmann::json::array();
    for (const auto& arr : a.arrays) {
        if (element_count(arr.shape) != static_cast<std::int64_t>(arr.data.size()))
            throw CheckpointError(arr.name + ": shape does not match data length");
        arrays.push_back({{"name", arr.name},
                          {"dtype", "f64"},
                          {"shape", arr.shape},
                          {"offset", payload.size()},
                          {"nbytes", arr.data.size() * sizeof(double)}});
        payload.append(reinterpret_cast<const char*>(arr.data.data()), arr.data.size() * sizeof(double));
    }
    const nlohmann::json header = {{"format_version", kFormatVersion},
                                   {"config", a.config_text},
                                   {"config_hash", a.config_hash},
                                   {"step", a.step},
                                   {"log_digest", a.log_digest},
                                   {"payload_digest", hex64(fnv1a(payload))},
                                   {"arrays", arrays}};
    const std::string h = header.dump();

    std::string out(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kFormatVersion);
    put<std::uint64_t>(out, h.size());
    out += h;
    out += payload;
    return out;
}

Archive deserialize(std::string_view bytes, const std::string& source) {
    constexpr std::size_t fixed = sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
    if (bytes.size() < fixed) throw CheckpointError(source + ": truncated (no header)");
    if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw CheckpointError(source + ": not a checkpoint file");
    const auto version = take<std::uint32_t>(bytes, sizeof kMagic);
    if (version != kFormatVersion)
        throw CheckpointError(source + ": unsupported format version " + std::to_string(version) + " (expected " +
                              std::to_string(kFormatVersion) + ")");
    const auto hlen = take<std::uint64_t>(bytes, sizeof kMagic + sizeof(std::uint32_t));
    if (hlen > bytes.size() - fixed) throw CheckpointError(source + ": truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(fixed, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(source + ": malformed header: " + e.what());
    }
    const std::string_view payload = bytes.substr(fixed + hlen);

    Archive a;
    try {
        if (header.at("format_version").get<std::uint32_t>() != version)
            throw CheckpointError(source + ": header version disagrees with file version");
        if (header.at("payload_digest").get<std::string>() != hex64(fnv1a(payload)))
            throw CheckpointError(source + ": payload digest mismatch (corrupted file)");
        a.config_text = header.at("config").get<std::string>();
        a.config_hash = header.at("config_hash").get<std::string>();
        a.step = header.at("step").get<int>();
        a.log_digest = header.at("log_digest").get<std::string>();
        for (const auto& e : header.at("arrays")) {
            NamedArray arr;
            arr.name = e.at("name").get<std::string>();
            if (e.at("dtype").get<std::string>() != "f64") throw CheckpointError(arr.name + ": unsupported dtype");
            arr.shape = e.at("shape").get<std::vector<std::int64_t>>();
            const auto offset = e.at("offset").get<std::uint64_t>();
            const auto nbytes = e.at("nbytes").get<std::uint64_t>();
            const std::int64_t n = element_count(arr.shape);
            if (n < 0 || static_cast<std::uint64_t>(n) * sizeof(double) != nbytes)
                throw CheckpointError(source + ": " + arr.name + ": byte count does not match shape");
            if (offset > payload.size() || nbytes > payload.size() - offset)
                throw CheckpointError(source + ": " + arr.name + ": array extends past end of file");
            arr.data.resize(static_cast<std::size_t>(n));
            std::memcpy(arr.data.data(), payload.data() + offset, nbytes);
            a.arrays.push_back(std::move(arr));
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(source + ": malformed header: " + e.what());
    }
    return a;
}

void write_file(const Archive& a, const std::filesystem::path& path) {
    const std::string bytes = serialize(a);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FileError("cannot write checkpoint " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FileError("short write to checkpoint " + path.string());
}

Archive read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FileError("cannot read checkpoint " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return deserialize(ss.str(), path.string());
}

std::string log_digest(const std::vector<train::LogRow>& log) { return hex64(fnv1a(train::format_log(log))); }

Archive pack(const config::RunConfig& cfg, const net::Model& model, const memory::MemoryBank& bank,
             const train::LabelerState* labeler, int step, const std::string& digest) {
    Archive a;
    a.config_text = config::to_text(cfg);
    a.config_hash = config::hash(cfg);
    a.step = step;
    a.log_digest = digest;

    for (const nn::Parameter* p : model.parameters())
        a.arrays.push_back({"params/" + p->name, {p->shape.begin(), p->shape.end()}, p->value});

    std::vector<double> sources;
    for (std::size_t s : bank.source_indices()) sources.push_back(static_cast<double>(s));
    a.arrays.push_back({"memory/size", {1}, {static_cast<double>(bank.size())}});
    a.arrays.push_back({"memory/sources", {static_cast<std::int64_t>(sources.size())}, sources});
    for (std::size_t i = 0; i < bank.size(); ++i)
        for (int s = 0; s < 3; ++s)
            a.arrays.push_back(tensor_array("memory/" + std::to_string(i) + "/f" + std::to_string(s + 1), bank[i][s]));

    if (labeler) {
        const auto& pl = labeler->labeler;
        a.arrays.push_back({"labeler/projector", {pl.projector.out_dims, pl.projector.in_dims}, pl.projector.matrix});
        a.arrays.push_back({"labeler/eta_p", {static_cast<std::int64_t>(pl.eta_p.size())}, pl.eta_p});
        a.arrays.push_back({"labeler/eta_n", {static_cast<std::int64_t>(pl.eta_n.size())}, pl.eta_n});
        for (int k = 0; k < pl.k(); ++k) {
            const auto& occ = pl.occs[k];
            const std::string base = "labeler/occ" + std::to_string(k) + "/";
            const std::int64_t j = occ.components(), d = occ.dims();
            std::vector<double> means, vars;
            for (int c = 0; c < occ.components(); ++c) {
                means.insert(means.end(), occ.means[c].begin(), occ.means[c].end());
                vars.insert(vars.end(), occ.variances[c].begin(), occ.variances[c].end());
            }
            a.arrays.push_back({base + "weights", {j}, occ.weights});
            a.arrays.push_back({base + "means", {j, d}, means});
            a.arrays.push_back({base + "variances", {j, d}, vars});
            a.arrays.push_back(scalar_array(base + "iterations", occ.iterations));
        }
        a.arrays.push_back(scalar_array("labeler/pool_median_area", labeler->pool_median_area));
        a.arrays.push_back(scalar_array("labeler/route_by_area", labeler->route_by_area ? 1.0 : 0.0));
        a.arrays.push_back(scalar_array("labeler/refreshed_at", labeler->refreshed_at));
    }
    return a;
}

Restored unpack(const Archive& a) {
    config::RunConfig cfg;
    try {
        cfg = config::parse(a.config_text, "checkpoint config");
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("embedded config is invalid: ") + e.what());
    }
    if (config::hash(cfg) != a.config_hash) throw CheckpointError("config hash mismatch");

    Restored r{cfg, net::Model(cfg.train.net, cfg.train.seed), {}, std::nullopt, a.step, a.log_digest};

    std::size_t n_params = 0;
    for (nn::Parameter* p : r.model.parameters()) {
        const NamedArray& arr = a.get("params/" + p->name);
        if (arr.shape != std::vector<std::int64_t>(p->shape.begin(), p->shape.end()))
            throw CheckpointError(arr.name + ": shape does not match the configured network");
        p->value = arr.data;
        ++n_params;
    }
    const auto stored_params = static_cast<std::size_t>(std::count_if(
        a.arrays.begin(), a.arrays.end(), [](const NamedArray& x) { return x.name.rfind("params/", 0) == 0; }));
    if (stored_params != n_params) throw CheckpointError("checkpoint holds parameters the configured network lacks");

    const auto n_entries = static_cast<std::size_t>(a.get("memory/size").data.at(0));
    const auto& src = a.get("memory/sources").data;
    std::vector<FeaturePyramid> entries(n_entries);
    for (std::size_t i = 0; i < n_entries; ++i)
        for (int s = 0; s < 3; ++s)
            entries[i][s] = to_tensor(a.get("memory/" + std::to_string(i) + "/f" + std::to_string(s + 1)));
    std::vector<std::size_t> sources;
    for (double v : src) sources.push_back(static_cast<std::size_t>(v));
    try {
        r.bank = memory::MemoryBank(std::move(entries), std::move(sources));
    } catch (const ParameterError& e) {
        throw CheckpointError(std::string("memory bank: ") + e.what());
    }

    if (a.has("labeler/projector")) {
        train::LabelerState st;
        auto& pl = st.labeler;
        const auto& proj = a.get("labeler/projector");
        if (proj.shape.size() != 2) throw CheckpointError("labeler/projector: expected a matrix");
        pl.projector.out_dims = static_cast<int>(proj.shape[0]);
        pl.projector.in_dims = static_cast<int>(proj.shape[1]);
        pl.projector.matrix = proj.data;
        const auto& eta_p = a.get("labeler/eta_p");
        const std::int64_t k = eta_p.shape.at(0);
        pl.eta_p = eta_p.data;
        pl.eta_n = expect_vector(a.get("labeler/eta_n"), k);
        for (std::int64_t i = 0; i < k; ++i) {
            const std::string base = "labeler/occ" + std::to_string(i) + "/";
            pseudo::OccModel occ;
            const auto& w = a.get(base + "weights");
            const std::int64_t j = w.shape.at(0);
            occ.weights = w.data;
            const auto& means = a.get(base + "means");
            const auto& vars = a.get(base + "variances");
            if (means.shape.size() != 2 || means.shape[0] != j || vars.shape != means.shape)
                throw CheckpointError(base + ": inconsistent mixture shapes");
            const std::int64_t d = means.shape[1];
            for (std::int64_t c = 0; c < j; ++c) {
                occ.means.emplace_back(means.data.begin() + c * d, means.data.begin() + (c + 1) * d);
                occ.variances.emplace_back(vars.data.begin() + c * d, vars.data.begin() + (c + 1) * d);
            }
            occ.iterations = static_cast<int>(expect_vector(a.get(base + "iterations"), 1)[0]);
            pl.occs.push_back(std::move(occ));
        }
        pl.eta_p_both_sides = cfg.train.labeler.eta_p_both_sides;
        st.pool_median_area = expect_vector(a.get("labeler/pool_median_area"), 1)[0];
        st.route_by_area = expect_vector(a.get("labeler/route_by_area"), 1)[0] != 0.0;
        st.refreshed_at = static_cast<int>(expect_vector(a.get("labeler/refreshed_at"), 1)[0]);
        r.labeler = std::move(st);
    }
    return r;
}

}  // namespace mapl::ckpt
