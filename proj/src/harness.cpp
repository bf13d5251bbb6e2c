#include "harness.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace exitlm {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

std::vector<int> tokenize(const std::string & bytes) {
    if (bytes.empty()) fail(errc::io, "empty corpus");
    std::vector<int> ids;
    ids.reserve(bytes.size() + 1);
    ids.push_back(k_bos_id);
    for (char c : bytes) ids.push_back((int) (unsigned char) c);
    return ids;
}

std::string detokenize(const std::vector<int> & ids) {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id == k_bos_id) continue;
        if (id < 0 || id > 255) {
            fail(errc::invalid_argument, "token id " + std::to_string(id) + " outside the byte vocab");
        }
        out.push_back((char) (unsigned char) id);
    }
    return out;
}

namespace {

std::string trim(const std::string & s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace((unsigned char) s[a])) ++a;
    while (b > a && std::isspace((unsigned char) s[b - 1])) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split(const std::string & s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    return out;
}

int to_int(const std::string & key, const std::string & v) {
    try {
        size_t pos = 0;
        const int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception &) {
        fail(errc::config, "config key '" + key + "': expected an integer, got '" + v + "'");
    }
}

uint64_t to_u64(const std::string & key, const std::string & v) {
    try {
        size_t pos = 0;
        const uint64_t x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception &) {
        fail(errc::config, "config key '" + key + "': expected an unsigned integer, got '" + v + "'");
    }
}

double to_double(const std::string & key, const std::string & v) {
    try {
        size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception &) {
        fail(errc::config, "config key '" + key + "': expected a number, got '" + v + "'");
    }
}

bool to_bool(const std::string & key, const std::string & v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    fail(errc::config, "config key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string & key, const std::string & v) {
    std::vector<int> out;
    if (trim(v).empty()) return out;
    for (const std::string & part : split(v, ',')) out.push_back(to_int(key, part));
    return out;
}

std::vector<double> to_double_list(const std::string & key, const std::string & v) {
    std::vector<double> out;
    if (trim(v).empty()) return out;
    for (const std::string & part : split(v, ',')) out.push_back(to_double(key, part));
    return out;
}

std::string read_file(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(errc::io, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string & path, const std::string & data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(errc::io, "cannot open " + path + " for writing");
    out.write(data.data(), (std::streamsize) data.size());
    if (!out) fail(errc::io, "short write to " + path);
}

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.15g", v);
    return buf;
}

run_mode mode_from(const std::string & s) {
    if (s == "full") return run_mode::full;
    if (s == "exits") return run_mode::exits;
    if (s == "pruned") return run_mode::pruned;
    fail(errc::config, "unknown mode '" + s + "' (expected full, exits or pruned)");
}

missing_state_policy resolve_policy(const std::string & s, backbone_kind kind) {
    if (s == "auto") {
        return kind == backbone_kind::transformer ? missing_state_policy::kv_copy
                                                  : missing_state_policy::ssm_skip;
    }
    return policy_from(s, kind);
}

std::vector<missing_state_policy> sweep_policies(const std::string & s, backbone_kind kind) {
    std::vector<missing_state_policy> out;
    if (trim(s) == "auto") {
        if (kind == backbone_kind::transformer) {
            out = {missing_state_policy::kv_copy, missing_state_policy::kv_recompute};
        } else {
            out = {missing_state_policy::ssm_skip, missing_state_policy::ssm_recompute};
        }
        return out;
    }
    for (const std::string & part : split(s, ',')) {
        const missing_state_policy p = policy_from(part, kind);
        if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
    }
    if (out.empty()) fail(errc::config, "no sweep policies given");
    return out;
}

} // namespace

void RunConfig::apply(const std::string & key, const std::string & value) {
    if (key == "backbone") backbone = value;
    else if (key == "n_blocks") n_blocks = to_int(key, value);
    else if (key == "d_model") d_model = to_int(key, value);
    else if (key == "n_heads") n_heads = to_int(key, value);
    else if (key == "max_seq_len") max_seq_len = to_int(key, value);
    else if (key == "d_state") d_state = to_int(key, value);
    else if (key == "d_conv") d_conv = to_int(key, value);
    else if (key == "n_groups") n_groups = to_int(key, value);
    else if (key == "exit_variant") exit_variant = value;
    else if (key == "n_exits") n_exits = to_int(key, value);
    else if (key == "placements") placements = to_int_list(key, value);
    else if (key == "cls_d_state") cls_d_state = to_int(key, value);
    else if (key == "cls_d_conv") cls_d_conv = to_int(key, value);
    else if (key == "cls_n_groups") cls_n_groups = to_int(key, value);
    else if (key == "steps_backbone") steps_backbone = to_int(key, value);
    else if (key == "steps_exits") steps_exits = to_int(key, value);
    else if (key == "window") window = to_int(key, value);
    else if (key == "batch") batch = to_int(key, value);
    else if (key == "k") k = to_int(key, value);
    else if (key == "lr_backbone") lr_backbone = to_double(key, value);
    else if (key == "lr_exits") lr_exits = to_double(key, value);
    else if (key == "seed") seed = to_u64(key, value);
    else if (key == "theta_grid") theta_grid = to_double_list(key, value);
    else if (key == "policies") policies = value;
    else if (key == "prune_levels") prune_levels = to_int_list(key, value);
    else if (key == "eval_windows") eval_windows = to_int(key, value);
    else if (key == "eval_window_len") eval_window_len = to_int(key, value);
    else if (key == "gen_prompts") gen_prompts = to_int(key, value);
    else if (key == "gen_prompt_len") gen_prompt_len = to_int(key, value);
    else if (key == "gen_max_new") gen_max_new = to_int(key, value);
    else if (key == "degen_run") degen_run = to_int(key, value);
    else if (key == "degen_max_frac") degen_max_frac = to_double(key, value);
    else if (key == "rep_penalty") rep_penalty = to_double(key, value);
    else if (key == "rep_mode") rep = value;
    else if (key == "include_prefill") include_prefill = to_bool(key, value);
    else if (key == "mode") mode = value;
    else if (key == "theta") theta = to_double(key, value);
    else if (key == "policy") policy = value;
    else if (key == "prune_p") prune_p = to_int(key, value);
    else if (key == "prompt") prompt = value;
    else if (key == "max_new") max_new = to_int(key, value);
    else if (key == "corpus") corpus = value;
    else if (key == "out_dir") out_dir = value;
    else if (key == "corpus_min_bytes") corpus_min_bytes = to_int(key, value);
    else if (key == "config_id") config_id = value;
    else fail(errc::config, "unknown config key '" + key + "'");
}

ModelConfig RunConfig::model_config() const {
    ModelConfig mc;
    mc.kind = backbone_from(backbone);
    mc.n_blocks = n_blocks;
    mc.d_model = d_model;
    mc.vocab_size = 257;
    mc.max_seq_len = max_seq_len;
    mc.n_heads = n_heads;
    mc.d_state = d_state;
    mc.d_conv = d_conv;
    mc.n_groups = n_groups;
    mc.validate();
    return mc;
}

ExitsConfig RunConfig::exits_config() const {
    ExitsConfig ec;
    ec.variant = variant_from(exit_variant);
    ec.n_exits = n_exits;
    ec.placements = placements;
    ec.cls_d_state = cls_d_state;
    ec.cls_d_conv = cls_d_conv;
    ec.cls_n_groups = cls_n_groups;
    return ec;
}

std::string RunConfig::id() const {
    if (!config_id.empty()) return config_id;
    return backbone + "-" + exit_variant + "-s" + std::to_string(seed);
}

void RunConfig::validate() const {
    model_config();
    variant_from(exit_variant);
    rep_mode_from(rep);
    mode_from(mode);
    if (n_exits < 1) fail(errc::config, "need at least one exit");
    if (!placements.empty()) validate_placements(placements, n_blocks);
    if (window < 2) fail(errc::config, "window must be at least 2");
    if (window > max_seq_len) fail(errc::config, "window exceeds max_seq_len");
    if (batch < 1) fail(errc::config, "batch must be positive");
    if (k < 1 || k > 257) fail(errc::config, "top-k must be in [1, 257]");
    if (steps_backbone < 0 || steps_exits < 0) fail(errc::config, "step counts must be nonnegative");
    if (theta_grid.empty()) fail(errc::config, "theta grid is empty");
    for (size_t i = 0; i < theta_grid.size(); ++i) {
        if (theta_grid[i] < 0.0) fail(errc::config, "theta must be nonnegative");
        if (i > 0 && theta_grid[i] <= theta_grid[i - 1]) {
            fail(errc::config, "theta grid must be strictly increasing");
        }
    }
    if (theta < 0.0) fail(errc::config, "theta must be nonnegative");
    for (int p : prune_levels) {
        if (p < 0 || p > n_blocks - 2) {
            fail(errc::config, "prune level " + std::to_string(p) + " outside [0, " +
                                   std::to_string(n_blocks - 2) + "]");
        }
    }
    if (prune_p < 0 || prune_p > n_blocks - 2) fail(errc::config, "prune_p out of range");
    if (eval_windows < 1) fail(errc::config, "need at least one evaluation window");
    if (eval_window_len < 2 || eval_window_len >= max_seq_len) {
        fail(errc::config, "eval_window_len must be in [2, max_seq_len)");
    }
    if (gen_prompts < 0) fail(errc::config, "gen_prompts must be nonnegative");
    if (gen_prompt_len < 1 || gen_max_new < 1) {
        fail(errc::config, "generation prompt and length must be positive");
    }
    if (gen_prompt_len + 1 + gen_max_new > max_seq_len) {
        fail(errc::config, "gen_prompt_len + gen_max_new exceeds max_seq_len");
    }
    if (degen_run < 2) fail(errc::config, "degen_run must be at least 2");
    if (degen_max_frac < 0.0 || degen_max_frac > 1.0) {
        fail(errc::config, "degen_max_frac must be in [0, 1]");
    }
    if (rep_penalty < 1.0) fail(errc::config, "rep_penalty must be at least 1");
    if (max_new < 1) fail(errc::config, "max_new must be positive");
    if (corpus_min_bytes < 1) fail(errc::config, "corpus_min_bytes must be positive");
}

RunConfig parse_run_config(const std::string & text) {
    RunConfig rc;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            fail(errc::config, "config line " + std::to_string(lineno) + " has no '='");
        }
        rc.apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    rc.validate();
    return rc;
}

namespace {

struct manifest_entry {
    std::string name;
    std::vector<int> shape;
    uint64_t offset = 0;
};

struct manifest {
    std::string kind;
    std::map<std::string, std::string> config;
    std::vector<manifest_entry> tensors;
};

manifest read_manifest(const std::string & path) {
    std::istringstream in(read_file(path));
    manifest m;
    std::string line;
    if (!std::getline(in, line) || trim(line) != "exitlm-checkpoint v1") {
        fail(errc::checkpoint, path + ": unsupported checkpoint format");
    }
    bool ended = false;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "kind") {
            ls >> m.kind;
        } else if (tag == "config") {
            std::string key, value;
            ls >> key >> value;
            if (!ls) fail(errc::checkpoint, path + ": malformed config line '" + line + "'");
            m.config[key] = value;
        } else if (tag == "tensor") {
            manifest_entry e;
            int nd = 0;
            ls >> e.name >> nd;
            if (!ls || nd < 1 || nd > 8) {
                fail(errc::checkpoint, path + ": malformed tensor line '" + line + "'");
            }
            for (int i = 0; i < nd; ++i) {
                int d = 0;
                ls >> d;
                e.shape.push_back(d);
            }
            ls >> e.offset;
            if (!ls) fail(errc::checkpoint, path + ": malformed tensor line for " + e.name);
            m.tensors.push_back(std::move(e));
        } else if (tag == "end") {
            ended = true;
            break;
        } else {
            fail(errc::checkpoint, path + ": unknown manifest tag '" + tag + "'");
        }
    }
    if (!ended) fail(errc::checkpoint, path + ": truncated manifest");
    return m;
}

std::string man_value(const manifest & m, const std::string & key, const std::string & path) {
    auto it = m.config.find(key);
    if (it == m.config.end()) fail(errc::checkpoint, path + ": manifest missing config key " + key);
    return it->second;
}

int man_int(const manifest & m, const std::string & key, const std::string & path) {
    const std::string v = man_value(m, key, path);
    try {
        return std::stoi(v);
    } catch (const std::exception &) {
        fail(errc::checkpoint, path + ": config key " + key + " is not an integer");
    }
}

std::string shape_text(const std::vector<int> & shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

void write_checkpoint(const std::string & dir, const std::string & stem, const std::string & kind,
                      const std::vector<std::pair<std::string, std::string>> & config_kv,
                      const std::vector<std::pair<std::string, Tensor>> & tensors) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    std::string man = "exitlm-checkpoint v1\nkind " + kind + "\n";
    for (const auto & [key, value] : config_kv) man += "config " + key + " " + value + "\n";
    std::string bin;
    uint64_t offset = 0;
    for (const auto & [name, t] : tensors) {
        man += "tensor " + name + " " + std::to_string(t.ndim());
        for (size_t i = 0; i < (size_t) t.ndim(); ++i) man += " " + std::to_string(t.dim((int) i));
        man += " " + std::to_string(offset) + "\n";
        bin.append((const char *) t.data(), t.numel() * sizeof(double));
        offset += t.numel() * sizeof(double);
    }
    man += "end\n";
    write_file(dir + "/" + stem + ".bin", bin);
    write_file(dir + "/" + stem + ".manifest", man);
}

void fill_tensors(const std::string & bin_path, const manifest & man,
                  const std::map<std::string, Tensor> & dst) {
    const std::string bin = read_file(bin_path);
    std::set<std::string> seen;
    for (const manifest_entry & e : man.tensors) {
        auto it = dst.find(e.name);
        if (it == dst.end()) {
            fail(errc::checkpoint, "checkpoint tensor " + e.name + " does not exist in this config");
        }
        Tensor t = it->second;
        if (e.shape != t.shape()) {
            fail(errc::checkpoint, "shape mismatch for tensor " + e.name + ": checkpoint " +
                                       shape_text(e.shape) + " vs model " + shape_text(t.shape()));
        }
        const uint64_t bytes = shape_numel(e.shape) * sizeof(double);
        if (e.offset + bytes > bin.size()) {
            fail(errc::checkpoint, "corrupted offset for tensor " + e.name);
        }
        std::memcpy(t.data(), bin.data() + e.offset, bytes);
        seen.insert(e.name);
    }
    for (const auto & [name, t] : dst) {
        (void) t;
        if (!seen.count(name)) fail(errc::checkpoint, "tensor " + name + " missing from checkpoint");
    }
}

std::map<std::string, Tensor> model_name_map(const ModelParams & m) {
    std::map<std::string, Tensor> out;
    visit_params(m, [&out](const std::string & n, Tensor t) { out.emplace(n, t); });
    return out;
}

std::map<std::string, Tensor> bank_name_map(const ExitBank & bank) {
    std::map<std::string, Tensor> out;
    visit_params(bank, [&out](const std::string & n, Tensor t) { out.emplace(n, t); });
    return out;
}

std::string join_ints(const std::vector<int> & v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(v[i]);
    }
    return s;
}

} // namespace

void save_backbone(const ModelParams & m, const std::string & dir) {
    const ModelConfig & c = m.cfg;
    std::vector<std::pair<std::string, std::string>> kv = {
        {"backbone", backbone_name(c.kind)},
        {"n_blocks", std::to_string(c.n_blocks)},
        {"d_model", std::to_string(c.d_model)},
        {"vocab_size", std::to_string(c.vocab_size)},
        {"max_seq_len", std::to_string(c.max_seq_len)},
        {"n_heads", std::to_string(c.n_heads)},
        {"d_state", std::to_string(c.d_state)},
        {"d_conv", std::to_string(c.d_conv)},
        {"n_groups", std::to_string(c.n_groups)},
    };
    std::vector<std::pair<std::string, Tensor>> ts;
    visit_params(m, [&ts](const std::string & n, Tensor t) { ts.emplace_back(n, t); });
    write_checkpoint(dir, "backbone", "backbone", kv, ts);
}

ModelParams load_backbone(const std::string & dir) {
    const std::string path = dir + "/backbone.manifest";
    manifest man = read_manifest(path);
    if (man.kind != "backbone") fail(errc::checkpoint, path + ": not a backbone checkpoint");
    ModelConfig c;
    c.kind = backbone_from(man_value(man, "backbone", path));
    c.n_blocks = man_int(man, "n_blocks", path);
    c.d_model = man_int(man, "d_model", path);
    c.vocab_size = man_int(man, "vocab_size", path);
    c.max_seq_len = man_int(man, "max_seq_len", path);
    c.n_heads = man_int(man, "n_heads", path);
    c.d_state = man_int(man, "d_state", path);
    c.d_conv = man_int(man, "d_conv", path);
    c.n_groups = man_int(man, "n_groups", path);
    c.validate();
    ModelParams m = make_model(c, 0);
    fill_tensors(dir + "/backbone.bin", man, model_name_map(m));
    return m;
}

void save_exits(const ExitBank & bank, const ModelConfig & mc, const std::string & dir) {
    std::vector<std::pair<std::string, std::string>> kv = {
        {"variant", variant_name(bank.cfg.variant)},
        {"placements", join_ints(bank.placements)},
        {"cls_d_state", std::to_string(bank.cfg.cls_d_state)},
        {"cls_d_conv", std::to_string(bank.cfg.cls_d_conv)},
        {"cls_n_groups", std::to_string(bank.cfg.cls_n_groups)},
        {"d_model", std::to_string(mc.d_model)},
    };
    std::vector<std::pair<std::string, Tensor>> ts;
    visit_params(bank, [&ts](const std::string & n, Tensor t) { ts.emplace_back(n, t); });
    write_checkpoint(dir, "exits", "exits", kv, ts);
}

ExitBank load_exits(const ModelConfig & mc, const std::string & dir) {
    const std::string path = dir + "/exits.manifest";
    manifest man = read_manifest(path);
    if (man.kind != "exits") fail(errc::checkpoint, path + ": not an exits checkpoint");
    const int ck_d = man_int(man, "d_model", path);
    if (ck_d != mc.d_model) {
        fail(errc::checkpoint, "exits checkpoint built for d_model " + std::to_string(ck_d) +
                                   " but the backbone has " + std::to_string(mc.d_model));
    }
    ExitsConfig ec;
    ec.variant = variant_from(man_value(man, "variant", path));
    ec.placements = to_int_list("placements", man_value(man, "placements", path));
    ec.n_exits = (int) ec.placements.size();
    ec.cls_d_state = man_int(man, "cls_d_state", path);
    ec.cls_d_conv = man_int(man, "cls_d_conv", path);
    ec.cls_n_groups = man_int(man, "cls_n_groups", path);
    ExitBank bank = make_exit_bank(mc, ec, 0);
    fill_tensors(dir + "/exits.bin", man, bank_name_map(bank));
    return bank;
}

void make_corpus(const std::string & path, int min_bytes) {
    if (min_bytes < 1) fail(errc::invalid_argument, "min_bytes must be positive");
    static const char * sentences[] = {
        "The river keeps its own slow ledger of stones and light. ",
        "A gray heron waits where the reeds bend into the current. ",
        "Morning fog lifts from the valley one field at a time. ",
        "The miller counts sacks of flour beside the wooden gate. ",
        "Rain taps the tin roof until the lamps are lit again. ",
        "An old map names every bridge between here and the sea. ",
        "The ferry rope hums when the wind crosses the narrow water. ",
        "Swallows stitch the evening sky above the quiet harbor. ",
    };
    const size_t n = sizeof sentences / sizeof sentences[0];
    std::string text;
    size_t i = 0;
    while ((int) text.size() < min_bytes) {
        text += sentences[i % n];
        ++i;
        if (i % n == 0) text += "\n";
    }
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(parent, ec);
    }
    write_file(path, text);
}

CorpusData load_corpus(const std::string & path) {
    const std::string bytes = read_file(path);
    if (bytes.empty()) fail(errc::io, "corpus " + path + " is empty");
    std::vector<int> ids(bytes.size());
    for (size_t i = 0; i < bytes.size(); ++i) ids[i] = (int) (unsigned char) bytes[i];
    const size_t cut = ids.size() * 9 / 10;
    CorpusData c;
    c.train.assign(ids.begin(), ids.begin() + (ptrdiff_t) cut);
    c.eval.assign(ids.begin() + (ptrdiff_t) cut, ids.end());
    if (c.train.empty() || c.eval.empty()) {
        fail(errc::io, "corpus " + path + " too small for a train/eval split");
    }
    return c;
}

namespace {

// BOS-led slices of the held-out stream at seeded random offsets.
std::vector<std::vector<int>> build_windows(const std::vector<int> & slice, int count, int len,
                                            uint64_t seed) {
    std::vector<std::vector<int>> out;
    if (count == 0) return out;
    if ((int) slice.size() < len) {
        fail(errc::invalid_argument, "held-out slice of " + std::to_string(slice.size()) +
                                         " bytes is shorter than a window of " + std::to_string(len));
    }
    rng r(seed);
    for (int i = 0; i < count; ++i) {
        const size_t o = (size_t) r.below((uint64_t) ((int) slice.size() - len + 1));
        std::vector<int> w;
        w.reserve((size_t) len + 1);
        w.push_back(k_bos_id);
        w.insert(w.end(), slice.begin() + (ptrdiff_t) o, slice.begin() + (ptrdiff_t) (o + (size_t) len));
        out.push_back(std::move(w));
    }
    return out;
}

// The id reflects the artifacts actually evaluated, not the command line.
std::string derive_id(const RunConfig & rc, const ModelParams & m, const ExitBank * bank) {
    if (!rc.config_id.empty()) return rc.config_id;
    const std::string variant = bank ? variant_name(bank->cfg.variant) : "prune";
    return std::string(backbone_name(m.cfg.kind)) + "-" + variant + "-s" + std::to_string(rc.seed);
}

SweepRecord eval_point(const std::string & id, const ModelParams & m, const ExitBank * bank,
                       const RunConfig & rc, const std::vector<std::vector<int>> & windows,
                       const std::vector<std::vector<int>> & prompts, run_mode mode, double theta,
                       missing_state_policy pol, int prune_p) {
    EvalRequest er;
    er.mode = mode;
    er.theta = theta;
    er.policy = pol;
    er.prune_p = prune_p;
    const EvalResult ev = evaluate_teacher_forced(m, bank, windows, er);

    int degenerate = 0;
    for (const std::vector<int> & prompt : prompts) {
        GenerationRequest gr;
        gr.prompt = prompt;
        gr.max_new = rc.gen_max_new;
        gr.mode = mode;
        gr.theta = theta;
        gr.policy = pol;
        gr.prune_p = prune_p;
        gr.rep_penalty = rc.rep_penalty;
        gr.rep = rep_mode_from(rc.rep);
        gr.degen_run = rc.degen_run;
        if (generate(m, bank, gr).degenerate) degenerate += 1;
    }
    const double frac = prompts.empty() ? 0.0 : (double) degenerate / (double) prompts.size();

    SweepRecord r;
    r.config_id = id;
    r.backbone = backbone_name(m.cfg.kind);
    r.exit_variant = mode == run_mode::exits ? variant_name(bank->cfg.variant) : "na";
    r.policy = mode == run_mode::exits ? policy_name(pol) : "prune";
    r.theta = mode == run_mode::exits ? theta : -1.0;
    r.prune_p = mode == run_mode::pruned ? prune_p : -1;
    r.accuracy = ev.accuracy;
    r.perplexity = ev.perplexity;
    r.reduction_factor = reduction_factor(ev.ledger, rc.include_prefill);
    r.ops_backbone = ev.ledger.backbone;
    r.ops_classifiers = ev.ledger.classifiers;
    r.ops_recompute = ev.ledger.recompute;
    r.mean_exit_depth = ev.mean_exit_depth;
    r.degenerate_fraction = frac;
    r.valid = frac <= rc.degen_max_frac;
    return r;
}

void sort_records(std::vector<SweepRecord> & records) {
    std::sort(records.begin(), records.end(), [](const SweepRecord & a, const SweepRecord & b) {
        if (a.reduction_factor != b.reduction_factor) {
            return a.reduction_factor < b.reduction_factor;
        }
        if (a.policy != b.policy) return a.policy < b.policy;
        if (a.theta != b.theta) return a.theta < b.theta;
        return a.prune_p < b.prune_p;
    });
}

const char * series_color(const std::string & policy) {
    if (policy == "copy") return "#1f77b4";
    if (policy == "recompute") return "#d62728";
    if (policy == "skip") return "#2ca02c";
    if (policy == "prune") return "#7f7f7f";
    return "#9467bd";
}

} // namespace

std::string sweep_csv(const std::vector<SweepRecord> & records) {
    std::vector<SweepRecord> rs = records;
    sort_records(rs);
    std::string out =
        "config_id,backbone,exit_variant,policy,theta,prune_p,accuracy,perplexity,"
        "reduction_factor,ops_backbone,ops_classifiers,ops_recompute,mean_exit_depth,"
        "degenerate_fraction,valid\n";
    for (const SweepRecord & r : rs) {
        out += r.config_id + "," + r.backbone + "," + r.exit_variant + "," + r.policy + ",";
        out += (r.theta < 0.0 ? std::string("na") : fmt_g(r.theta)) + ",";
        out += (r.prune_p < 0 ? std::string("na") : std::to_string(r.prune_p)) + ",";
        out += fmt_g(r.accuracy) + "," + fmt_g(r.perplexity) + "," + fmt_g(r.reduction_factor) + ",";
        out += fmt_g(r.ops_backbone) + "," + fmt_g(r.ops_classifiers) + "," +
               fmt_g(r.ops_recompute) + ",";
        out += fmt_g(r.mean_exit_depth) + "," + fmt_g(r.degenerate_fraction) + ",";
        out += r.valid ? "true" : "false";
        out += "\n";
    }
    return out;
}

std::string sweep_svg(const std::vector<SweepRecord> & records, const std::string & title) {
    std::vector<SweepRecord> rs;
    for (const SweepRecord & r : records) {
        if (r.valid) rs.push_back(r);
    }
    sort_records(rs);

    const double W = 720, H = 480, ml = 70, mr = 160, mt = 46, mb = 54;
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    svg << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"15\">" << title << "</text>\n";

    if (rs.empty()) {
        svg << "<text x=\"" << W / 2 << "\" y=\"" << H / 2
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
            << "no valid records</text>\n</svg>\n";
        return svg.str();
    }

    double x0 = rs[0].reduction_factor, x1 = x0, y0 = rs[0].accuracy, y1 = y0;
    for (const SweepRecord & r : rs) {
        x0 = std::min(x0, r.reduction_factor);
        x1 = std::max(x1, r.reduction_factor);
        y0 = std::min(y0, r.accuracy);
        y1 = std::max(y1, r.accuracy);
    }
    const double xpad = std::max((x1 - x0) * 0.05, 1e-3), ypad = std::max((y1 - y0) * 0.05, 1e-3);
    x0 -= xpad, x1 += xpad, y0 -= ypad, y1 += ypad;
    const auto sx = [&](double v) { return ml + (v - x0) / (x1 - x0) * (W - ml - mr); };
    const auto sy = [&](double v) { return H - mb - (v - y0) / (y1 - y0) * (H - mt - mb); };

    svg << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
        << H - mb << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
        << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = x0 + (x1 - x0) * i / 4.0, fy = y0 + (y1 - y0) * i / 4.0;
        char lx[32], ly[32];
        std::snprintf(lx, sizeof lx, "%.4g", fx);
        std::snprintf(ly, sizeof ly, "%.4g", fy);
        svg << "<text x=\"" << sx(fx) << "\" y=\"" << H - mb + 18
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << lx
            << "</text>\n";
        svg << "<text x=\"" << ml - 8 << "\" y=\"" << sy(fy) + 4
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << ly
            << "</text>\n";
    }
    svg << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 14
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
        << "reduction factor</text>\n";
    svg << "<text x=\"18\" y=\"" << (mt + H - mb) / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
        << "transform=\"rotate(-90 18 " << (mt + H - mb) / 2 << ")\">accuracy</text>\n";

    std::map<std::string, std::vector<const SweepRecord *>> series;
    for (const SweepRecord & r : rs) series[r.policy].push_back(&r);

    int legend_row = 0;
    for (const auto & [policy, points] : series) {
        const char * color = series_color(policy);
        std::ostringstream poly;
        for (const SweepRecord * p : points) {
            poly << sx(p->reduction_factor) << "," << sy(p->accuracy) << " ";
        }
        if (points.size() > 1) {
            svg << "<polyline points=\"" << poly.str() << "\" fill=\"none\" stroke=\"" << color
                << "\" stroke-width=\"1.5\"/>\n";
        }
        for (const SweepRecord * p : points) {
            svg << "<circle cx=\"" << sx(p->reduction_factor) << "\" cy=\"" << sy(p->accuracy)
                << "\" r=\"4\" fill=\"" << color << "\"/>\n";
        }
        const double lyy = mt + 14 + 18 * legend_row;
        svg << "<rect x=\"" << W - mr + 16 << "\" y=\"" << lyy - 9
            << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n";
        svg << "<text x=\"" << W - mr + 32 << "\" y=\"" << lyy
            << "\" font-family=\"sans-serif\" font-size=\"12\">" << policy << "</text>\n";
        ++legend_row;
    }
    svg << "</svg>\n";
    return svg.str();
}

void cmd_make_corpus(const RunConfig & rc) {
    rc.validate();
    make_corpus(rc.corpus, rc.corpus_min_bytes);
}

TrainReport cmd_train_backbone(const RunConfig & rc) {
    rc.validate();
    const CorpusData corp = load_corpus(rc.corpus);
    ModelParams m = make_model(rc.model_config(), rc.seed);
    TrainConfig tc;
    tc.steps = rc.steps_backbone;
    tc.window = rc.window;
    tc.batch = rc.batch;
    tc.k = rc.k;
    tc.lr = rc.lr_backbone;
    tc.seed = rc.seed;
    const TrainReport rep = train_backbone(m, corp.train, tc);
    save_backbone(m, rc.out_dir);
    return rep;
}

TrainReport cmd_train_exits(const RunConfig & rc) {
    rc.validate();
    const CorpusData corp = load_corpus(rc.corpus);
    const ModelParams m = load_backbone(rc.out_dir);
    ExitBank bank = make_exit_bank(m.cfg, rc.exits_config(), rc.seed + 1);
    TrainConfig tc;
    tc.steps = rc.steps_exits;
    tc.window = rc.window;
    tc.batch = rc.batch;
    tc.k = rc.k;
    tc.lr = rc.lr_exits;
    tc.seed = rc.seed + 1;
    const TrainReport rep = train_classifiers(m, bank, corp.train, tc);
    save_exits(bank, m.cfg, rc.out_dir);
    return rep;
}

GenerationResult cmd_generate(const RunConfig & rc, std::string * out_text) {
    rc.validate();
    const ModelParams m = load_backbone(rc.out_dir);
    const run_mode mode = mode_from(rc.mode);
    ExitBank bank;
    if (mode == run_mode::exits) bank = load_exits(m.cfg, rc.out_dir);

    GenerationRequest gr;
    gr.prompt = tokenize(rc.prompt);
    gr.max_new = rc.max_new;
    gr.mode = mode;
    gr.theta = rc.theta;
    gr.policy = resolve_policy(rc.policy, m.cfg.kind);
    gr.prune_p = rc.prune_p;
    gr.rep_penalty = rc.rep_penalty;
    gr.rep = rep_mode_from(rc.rep);
    gr.degen_run = rc.degen_run;
    const GenerationResult g = generate(m, mode == run_mode::exits ? &bank : nullptr, gr);
    if (out_text) *out_text = rc.prompt + detokenize(g.ids);
    return g;
}

std::vector<SweepRecord> cmd_sweep(const RunConfig & rc, std::string * out_csv_path) {
    rc.validate();
    const CorpusData corp = load_corpus(rc.corpus);
    const ModelParams m = load_backbone(rc.out_dir);
    const ExitBank bank = load_exits(m.cfg, rc.out_dir);
    const auto windows = build_windows(corp.eval, rc.eval_windows, rc.eval_window_len, rc.seed + 2);
    const auto prompts = build_windows(corp.eval, rc.gen_prompts, rc.gen_prompt_len, rc.seed + 3);

    const std::string id = derive_id(rc, m, &bank);
    std::vector<SweepRecord> records;
    for (int p : rc.prune_levels) {
        records.push_back(eval_point(id, m, nullptr, rc, windows, prompts, run_mode::pruned, 0.0,
                                     missing_state_policy::kv_copy, p));
    }
    for (missing_state_policy pol : sweep_policies(rc.policies, m.cfg.kind)) {
        for (double theta : rc.theta_grid) {
            records.push_back(
                eval_point(id, m, &bank, rc, windows, prompts, run_mode::exits, theta, pol, 0));
        }
    }
    sort_records(records);

    std::error_code ec;
    std::filesystem::create_directories(rc.out_dir, ec);
    const std::string csv_path = rc.out_dir + "/sweep.csv";
    write_file(csv_path, sweep_csv(records));
    write_file(rc.out_dir + "/sweep.svg", sweep_svg(records, id));
    if (out_csv_path) *out_csv_path = csv_path;
    return records;
}

std::vector<SweepRecord> cmd_prune_eval(const RunConfig & rc, std::string * out_csv_path) {
    rc.validate();
    const CorpusData corp = load_corpus(rc.corpus);
    const ModelParams m = load_backbone(rc.out_dir);
    const auto windows = build_windows(corp.eval, rc.eval_windows, rc.eval_window_len, rc.seed + 2);
    const auto prompts = build_windows(corp.eval, rc.gen_prompts, rc.gen_prompt_len, rc.seed + 3);

    const std::string id = derive_id(rc, m, nullptr);
    std::vector<SweepRecord> records;
    for (int p : rc.prune_levels) {
        records.push_back(eval_point(id, m, nullptr, rc, windows, prompts, run_mode::pruned, 0.0,
                                     missing_state_policy::kv_copy, p));
    }
    sort_records(records);

    std::error_code ec;
    std::filesystem::create_directories(rc.out_dir, ec);
    const std::string csv_path = rc.out_dir + "/prune.csv";
    write_file(csv_path, sweep_csv(records));
    write_file(rc.out_dir + "/prune.svg", sweep_svg(records, id));
    if (out_csv_path) *out_csv_path = csv_path;
    return records;
}

} // namespace exitlm
