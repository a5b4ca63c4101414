#include "emosllm/checkpoint.hpp"

#include <cstring>

#include <nlohmann/json.hpp>

#include "emosllm/util.hpp"

namespace emosllm {

using json = nlohmann::json;

namespace {

constexpr char kMagic[4] = {'E', 'M', 'O', 'C'};

void put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& s, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}

void put_str(std::string& s, const std::string& v) {
    put_u32(s, std::uint32_t(v.size()));
    s += v;
}

void put_f32s(std::string& s, const std::vector<float>& v) {
    const std::size_t off = s.size();
    s.resize(off + v.size() * 4);
    std::memcpy(s.data() + off, v.data(), v.size() * 4);
}

class Reader {
public:
    Reader(const std::string& buf, std::size_t pos, std::string section)
        : buf_(buf), pos_(pos), section_(std::move(section)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | std::uint8_t(buf_[pos_ + std::size_t(i)]);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | std::uint8_t(buf_[pos_ + std::size_t(i)]);
        pos_ += 8;
        return v;
    }

    std::uint8_t u8() {
        need(1);
        return std::uint8_t(buf_[pos_++]);
    }

    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string v = buf_.substr(pos_, n);
        pos_ += n;
        return v;
    }

    void f32s(std::vector<float>& out, std::size_t count) {
        need(count * 4);
        out.resize(count);
        std::memcpy(out.data(), buf_.data() + pos_, count * 4);
        pos_ += count * 4;
    }

    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) {
        if (pos_ + n > buf_.size())
            throw IntegrityError("checkpoint: truncated read in section '" + section_ +
                                 "' at offset " + std::to_string(pos_));
    }

    const std::string& buf_;
    std::size_t pos_;
    std::string section_;
};

struct Section {
    std::string name;
    std::string payload;
};

std::string dump_params(const ParamStore<float>& store) {
    std::string out;
    put_u32(out, std::uint32_t(store.size()));
    for (int i = 0; i < store.size(); ++i) {
        const auto& e = store[i];
        put_str(out, e.name);
        put_u32(out, std::uint32_t(e.value.rows));
        put_u32(out, std::uint32_t(e.value.cols));
        out.push_back(e.trainable ? char(1) : char(0));
        put_f32s(out, e.value.a);
    }
    return out;
}

std::string dump_trainer(const ModelState& state) {
    std::string out;
    put_u64(out, std::uint64_t(state.adam.step));
    put_u32(out, std::uint32_t(state.resume_epoch));
    std::uint32_t n = 0;
    for (int i = 0; i < state.store.size(); ++i)
        if (!state.store[i].m.empty()) ++n;
    put_u32(out, n);
    for (int i = 0; i < state.store.size(); ++i) {
        const auto& e = state.store[i];
        if (e.m.empty()) continue;
        put_str(out, e.name);
        put_u32(out, std::uint32_t(e.m.rows));
        put_u32(out, std::uint32_t(e.m.cols));
        put_f32s(out, e.m.a);
        put_f32s(out, e.v.a);
    }
    return out;
}

}  // namespace

void save_checkpoint(const ModelState& state, const std::string& path, bool include_trainer) {
    const bool with_trainer = include_trainer || state.has_trainer_state;

    std::vector<Section> sections;
    sections.push_back({"config", state.cfg_json});
    sections.push_back({"tokenizer", state.tokenizer.serialize()});
    sections.push_back({"bins", state.bins_fitted ? bins_to_json(state.bins) : std::string()});

    json meta{{"vocab_size", state.tokenizer.vocab_size()},
              {"lora_injected", state.lora.injected},
              {"bins_fitted", state.bins_fitted},
              {"pools_hash", state.pools_hash},
              {"provenance", state.provenance},
              {"has_trainer", with_trainer},
              {"early_best", state.early_best},
              {"early_since", state.early_since}};
    sections.push_back({"meta", meta.dump()});
    sections.push_back({"params", dump_params(state.store)});

    std::string rng_bytes;
    std::uint64_t rng_words[6];
    state.train_rng.serialize(rng_words);
    for (std::uint64_t w : rng_words) put_u64(rng_bytes, w);
    sections.push_back({"rng", rng_bytes});

    if (with_trainer) sections.push_back({"trainer", dump_trainer(state)});

    std::string table;
    std::string payload;
    // First pass to size the table, second pass with real offsets.
    for (int pass = 0; pass < 2; ++pass) {
        table.clear();
        payload.clear();
        std::size_t header_size = 4 + 4 + 8 + 4 + 8;
        std::size_t table_size = 0;
        for (const auto& s : sections) table_size += 4 + s.name.size() + 8 + 8 + 8;
        std::size_t offset = header_size + table_size;
        for (const auto& s : sections) {
            put_str(table, s.name);
            put_u64(table, offset);
            put_u64(table, s.payload.size());
            put_u64(table, fnv1a64(s.payload));
            payload += s.payload;
            offset += s.payload.size();
        }
    }

    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kCheckpointVersion);
    put_u64(out, run_config_hash(state.cfg));
    put_u32(out, std::uint32_t(sections.size()));
    put_u64(out, fnv1a64(payload));
    out += table;
    out += payload;
    write_text_file(path, out);
}

namespace {

struct ParsedFile {
    std::uint32_t version = 0;
    std::uint64_t config_hash = 0;
    std::vector<std::pair<std::string, std::string>> sections;  // name -> payload
};

ParsedFile parse_file(const std::string& path) {
    const std::string buf = read_text_file(path);
    if (buf.size() < 28 || std::memcmp(buf.data(), kMagic, 4) != 0)
        throw IntegrityError("not a checkpoint file: " + path);
    Reader head(buf, 4, "header");
    ParsedFile f;
    f.version = head.u32();
    if (f.version != kCheckpointVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(f.version) +
                        " (expected " + std::to_string(kCheckpointVersion) +
                        "); no migration path");
    f.config_hash = head.u64();
    const std::uint32_t n_sections = head.u32();
    const std::uint64_t whole_sum = head.u64();

    Reader table(buf, head.pos(), "table");
    std::string payload_concat;
    for (std::uint32_t i = 0; i < n_sections; ++i) {
        const std::string name = table.str();
        const std::uint64_t offset = table.u64();
        const std::uint64_t size = table.u64();
        const std::uint64_t sum = table.u64();
        if (offset + size > buf.size())
            throw IntegrityError("checkpoint section '" + name + "' out of bounds at offset " +
                                 std::to_string(offset));
        std::string payload = buf.substr(offset, size);
        if (fnv1a64(payload) != sum)
            throw IntegrityError("checkpoint section '" + name +
                                 "' checksum mismatch at offset " + std::to_string(offset));
        payload_concat += payload;
        f.sections.emplace_back(name, std::move(payload));
    }
    if (fnv1a64(payload_concat) != whole_sum)
        throw IntegrityError("checkpoint whole-file checksum mismatch: " + path);
    return f;
}

const std::string& section(const ParsedFile& f, const std::string& name) {
    for (const auto& [n, p] : f.sections)
        if (n == name) return p;
    throw IntegrityError("checkpoint missing section '" + name + "'");
}

bool has_section(const ParsedFile& f, const std::string& name) {
    for (const auto& [n, p] : f.sections)
        if (n == name) return true;
    return false;
}

}  // namespace

std::uint64_t checkpoint_config_hash(const std::string& path) {
    return parse_file(path).config_hash;
}

ModelState load_checkpoint(const std::string& path) {
    const ParsedFile f = parse_file(path);

    ModelState state;
    state.cfg_json = section(f, "config");
    state.cfg = run_config_from_json(state.cfg_json, "");
    if (run_config_hash(state.cfg) != f.config_hash)
        throw IntegrityError("checkpoint config hash mismatch: " + path);
    state.tokenizer = Tokenizer::deserialize(section(f, "tokenizer"));

    const json meta = json::parse(section(f, "meta"));
    const int vocab = meta.at("vocab_size").get<int>();
    const bool injected = meta.at("lora_injected").get<bool>();
    state.bins_fitted = meta.at("bins_fitted").get<bool>();
    if (state.bins_fitted) state.bins = bins_from_json(section(f, "bins"));
    state.pools_hash = meta.at("pools_hash").get<std::uint64_t>();
    state.provenance = meta.at("provenance").get<std::vector<std::string>>();
    state.early_best = meta.value("early_best", 0.0);
    state.early_since = meta.value("early_since", 0);

    build_model_defs(state, vocab, injected);

    // Overwrite the structurally initialized parameters with stored values.
    Reader pr(section(f, "params"), 0, "params");
    const std::uint32_t count = pr.u32();
    if (int(count) != state.store.size())
        throw IntegrityError("checkpoint parameter count mismatch: file has " +
                             std::to_string(count) + ", model defines " +
                             std::to_string(state.store.size()));
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = pr.str();
        auto& e = state.store[int(i)];
        if (e.name != name)
            throw IntegrityError("checkpoint parameter order mismatch at '" + name +
                                 "' (expected '" + e.name + "')");
        const int rows = int(pr.u32());
        const int cols = int(pr.u32());
        if (rows != e.value.rows || cols != e.value.cols)
            throw IntegrityError("checkpoint shape mismatch for '" + name + "'");
        e.trainable = pr.u8() != 0;
        pr.f32s(e.value.a, std::size_t(rows) * std::size_t(cols));
    }

    Reader rr(section(f, "rng"), 0, "rng");
    std::uint64_t words[6];
    for (auto& w : words) w = rr.u64();
    state.train_rng.deserialize(words);

    state.has_trainer_state = meta.value("has_trainer", false) && has_section(f, "trainer");
    if (state.has_trainer_state) {
        Reader tr(section(f, "trainer"), 0, "trainer");
        state.adam.step = (long long)tr.u64();
        state.resume_epoch = int(tr.u32());
        const std::uint32_t n = tr.u32();
        for (std::uint32_t i = 0; i < n; ++i) {
            const std::string name = tr.str();
            int id = -1;
            for (int k = 0; k < state.store.size(); ++k)
                if (state.store[k].name == name) {
                    id = k;
                    break;
                }
            if (id < 0) throw IntegrityError("checkpoint trainer refers to unknown '" + name + "'");
            auto& e = state.store[id];
            const int rows = int(tr.u32());
            const int cols = int(tr.u32());
            if (rows != e.value.rows || cols != e.value.cols)
                throw IntegrityError("checkpoint moment shape mismatch for '" + name + "'");
            e.m = Mat<float>(rows, cols);
            e.v = Mat<float>(rows, cols);
            tr.f32s(e.m.a, e.m.size());
            tr.f32s(e.v.a, e.v.size());
        }
    }
    return state;
}

}  // namespace emosllm
