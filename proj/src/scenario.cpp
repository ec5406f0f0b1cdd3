//
// Copyright (c) 2026 the tzsim authors.
// SPDX-License-Identifier: Apache-2.0
//
#include "tzsim/scenario.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace tzsim {

using nlohmann::json;

Baseline baseline_from_string(const std::string& s) {
    if (s == "TZLLM")
        return Baseline::TzLlm;
    if (s == "Strawman")
        return Baseline::Strawman;
    if (s == "REE-Flash")
        return Baseline::ReeFlash;
    if (s == "REE-Memory")
        return Baseline::ReeMemory;
    throw SchemaError("unknown baseline: " + s);
}

const char* to_string(Baseline b) {
    switch (b) {
    case Baseline::TzLlm: return "TZLLM";
    case Baseline::Strawman: return "Strawman";
    case Baseline::ReeFlash: return "REE-Flash";
    case Baseline::ReeMemory: return "REE-Memory";
    }
    return "?";
}

int Scenario::cached_group_count(int group_total) const {
    long k = std::lround(cached_fraction * group_total);
    return static_cast<int>(std::clamp(k, 0L, static_cast<long>(group_total)));
}

// ---------------------------------------------------------------------------
// Strict JSON schema helpers
// ---------------------------------------------------------------------------

namespace {

class Obj {
public:
    Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object())
            throw SchemaError(path_ + ": expected an object");
    }

    bool has(const char* key) const { return j_.contains(key); }

    const json& child(const char* key) {
        mark(key);
        auto it = j_.find(key);
        if (it == j_.end())
            throw SchemaError(path_ + ": missing required field '" + key + "'");
        return *it;
    }

    template <typename T>
    T get(const char* key) {
        return convert<T>(child(key), key);
    }

    template <typename T>
    T get_or(const char* key, T def) {
        if (!j_.contains(key))
            return def;
        mark(key);
        return convert<T>(j_[key], key);
    }

    void done() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!consumed_.count(it.key()))
                throw SchemaError(path_ + ": unknown field '" + it.key() + "'");
    }

    const std::string& path() const { return path_; }

private:
    void mark(const char* key) { consumed_.insert(key); }

    template <typename T>
    T convert(const json& v, const char* key) const {
        try {
            return v.get<T>();
        } catch (const json::exception&) {
            throw SchemaError(path_ + "." + key + ": wrong type");
        }
    }

    const json& j_;
    std::string path_;
    std::set<std::string> consumed_;
};

ModelSpec parse_model(const json& j, const std::string& path) {
    Obj o(j, path);
    ModelSpec m;
    m.name = o.get<std::string>("name");
    m.layer_count = o.get_or<int>("layer_count", 0);
    m.prompt_tokens = o.get<int>("prompt_tokens");
    m.param_bytes = o.get_or<bytes_t>("param_bytes", 0);
    m.kv_bytes_per_token = o.get_or<bytes_t>("kv_bytes_per_token", 0);
    m.working_fixed_bytes = o.get_or<bytes_t>("working_fixed_bytes", 0);

    if (o.has("layer_ops")) {
        for (const auto& lo : o.child("layer_ops")) {
            Obj op(lo, path + ".layer_ops[]");
            LayerOpTemplate t;
            t.kind = op.get<std::string>("kind");
            t.hw = hw_from_string(op.get<std::string>("hw"));
            t.uses_group = op.get_or<bool>("uses_group", false);
            op.done();
            m.layer_ops.push_back(std::move(t));
        }
    }
    if (o.has("groups")) {
        int gi = 0;
        for (const auto& gj : o.child("groups")) {
            Obj gg(gj, path + ".groups[]");
            TensorGroupSpec g;
            g.index = gi++;
            g.byte_size = gg.get<bytes_t>("bytes");
            gg.done();
            m.groups.push_back(std::move(g));
        }
    }
    if (o.has("ops")) {
        for (const auto& oj : o.child("ops")) {
            Obj oo(oj, path + ".ops[]");
            ComputeOpSpec op;
            op.kind = oo.get<std::string>("kind");
            op.hw = hw_from_string(oo.get<std::string>("hw"));
            if (oo.has("duration_us"))
                op.duration_us = oo.get<micros_t>("duration_us");
            if (oo.has("group"))
                op.tensor_group = oo.get<int>("group");
            op.preds = oo.get_or<std::vector<int>>("preds", {});
            oo.done();
            m.ops.push_back(std::move(op));
        }
    }
    if (o.has("durations")) {
        for (const auto& dj : o.child("durations")) {
            Obj dd(dj, path + ".durations[]");
            auto kind = dd.get<std::string>("kind");
            auto hw = hw_from_string(dd.get<std::string>("hw"));
            int bucket = dd.get<int>("bucket");
            micros_t us = dd.get<micros_t>("us");
            dd.done();
            m.set_duration(kind, hw, bucket, us);
        }
    }
    o.done();
    return m;
}

json model_to_json(const ModelSpec& m) {
    json j;
    j["name"] = m.name;
    if (m.layer_count > 0)
        j["layer_count"] = m.layer_count;
    j["prompt_tokens"] = m.prompt_tokens;
    if (m.param_bytes > 0)
        j["param_bytes"] = m.param_bytes;
    if (m.kv_bytes_per_token > 0)
        j["kv_bytes_per_token"] = m.kv_bytes_per_token;
    if (m.working_fixed_bytes > 0)
        j["working_fixed_bytes"] = m.working_fixed_bytes;
    if (!m.layer_ops.empty()) {
        json a = json::array();
        for (const auto& t : m.layer_ops)
            a.push_back({{"kind", t.kind}, {"hw", to_string(t.hw)}, {"uses_group", t.uses_group}});
        j["layer_ops"] = a;
    }
    if (!m.groups.empty() && m.ops.empty() == false) {
        json a = json::array();
        for (const auto& g : m.groups)
            a.push_back({{"bytes", g.byte_size}});
        j["groups"] = a;
    }
    if (!m.ops.empty()) {
        json a = json::array();
        for (const auto& op : m.ops) {
            json oj = {{"kind", op.kind}, {"hw", to_string(op.hw)}};
            if (op.duration_us)
                oj["duration_us"] = *op.duration_us;
            if (op.tensor_group)
                oj["group"] = *op.tensor_group;
            if (!op.preds.empty())
                oj["preds"] = op.preds;
            a.push_back(std::move(oj));
        }
        j["ops"] = a;
    }
    if (!m.durations.empty()) {
        json a = json::array();
        for (const auto& [key, us] : m.durations) {
            const auto& [kind, hw, bucket] = key;
            a.push_back({{"kind", kind},
                         {"hw", to_string(static_cast<Hw>(hw))},
                         {"bucket", bucket},
                         {"us", us}});
        }
        j["durations"] = a;
    }
    return j;
}

HardwareModel parse_hardware(const json& j, const std::string& path) {
    Obj o(j, path);
    HardwareModel hw;
    hw.cpu_lanes = o.get_or<int>("cpu_lanes", hw.cpu_lanes);
    hw.io_bytes_per_s = o.get_or<double>("io_bytes_per_s", hw.io_bytes_per_s);
    hw.decrypt_bytes_per_s = o.get_or<double>("decrypt_bytes_per_s", hw.decrypt_bytes_per_s);
    hw.cma_migrate_1t_bytes_per_s =
        o.get_or<double>("cma_migrate_1t_bytes_per_s", hw.cma_migrate_1t_bytes_per_s);
    hw.cma_migrate_4t_bytes_per_s =
        o.get_or<double>("cma_migrate_4t_bytes_per_s", hw.cma_migrate_4t_bytes_per_s);
    hw.npu_world_switch_us = o.get_or<micros_t>("npu_world_switch_us", hw.npu_world_switch_us);
    hw.naive_reinit_us = o.get_or<micros_t>("naive_reinit_us", hw.naive_reinit_us);
    hw.framework_init_us = o.get_or<micros_t>("framework_init_us", hw.framework_init_us);
    hw.checkpoint_restore_us =
        o.get_or<micros_t>("checkpoint_restore_us", hw.checkpoint_restore_us);
    o.done();
    return hw;
}

json hardware_to_json(const HardwareModel& hw) {
    HardwareModel def;
    json j = json::object();
    auto put = [&](const char* k, auto v, auto dv) {
        if (v != dv)
            j[k] = v;
    };
    put("cpu_lanes", hw.cpu_lanes, def.cpu_lanes);
    put("io_bytes_per_s", hw.io_bytes_per_s, def.io_bytes_per_s);
    put("decrypt_bytes_per_s", hw.decrypt_bytes_per_s, def.decrypt_bytes_per_s);
    put("cma_migrate_1t_bytes_per_s", hw.cma_migrate_1t_bytes_per_s,
        def.cma_migrate_1t_bytes_per_s);
    put("cma_migrate_4t_bytes_per_s", hw.cma_migrate_4t_bytes_per_s,
        def.cma_migrate_4t_bytes_per_s);
    put("npu_world_switch_us", hw.npu_world_switch_us, def.npu_world_switch_us);
    put("naive_reinit_us", hw.naive_reinit_us, def.naive_reinit_us);
    put("framework_init_us", hw.framework_init_us, def.framework_init_us);
    put("checkpoint_restore_us", hw.checkpoint_restore_us, def.checkpoint_restore_us);
    return j;
}

} // namespace

Scenario parse_scenario_json(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw SchemaError(origin + ": " + e.what());
    }
    Obj o(j, origin);
    Scenario s;
    s.name = o.get_or<std::string>("name", "scenario");
    s.model = parse_model(o.child("model"), origin + ".model");
    if (o.has("hardware"))
        s.hw = parse_hardware(o.child("hardware"), origin + ".hardware");
    s.policy = policy_from_string(o.get<std::string>("policy"));
    s.baseline = baseline_from_string(o.get_or<std::string>("baseline", "TZLLM"));
    s.cached_fraction = o.get_or<double>("cached_fraction", 0.0);
    if (s.cached_fraction < 0.0 || s.cached_fraction > 1.0)
        throw SchemaError(origin + ".cached_fraction: must be in [0,1]");
    s.prompt_tokens_override = o.get_or<int>("prompt_tokens", -1);
    s.decode_tokens = o.get_or<int>("decode_tokens", 0);
    s.npu_sharing = o.get_or<bool>("npu_sharing", false);
    std::string sw = o.get_or<std::string>("npu_switch", "codriver");
    if (sw != "codriver" && sw != "naive")
        throw SchemaError(origin + ".npu_switch: expected 'codriver' or 'naive'");
    s.naive_npu_switch = sw == "naive";
    s.seed = o.get_or<std::uint64_t>("seed", 0);
    s.chunk_bytes = o.get_or<bytes_t>("chunk_bytes", s.chunk_bytes);
    if (o.has("pressure")) {
        Obj p(o.child("pressure"), origin + ".pressure");
        s.pressure.cma_occupied_fraction =
            p.get_or<double>("cma_occupied_fraction", s.pressure.cma_occupied_fraction);
        s.pressure.post_inference_signal_bytes =
            p.get_or<bytes_t>("post_inference_signal_bytes", 0);
        p.done();
    }
    if (o.has("cma")) {
        Obj c(o.child("cma"), origin + ".cma");
        s.param_cma.region_bytes = c.get_or<bytes_t>("region_bytes", s.param_cma.region_bytes);
        s.param_cma.page_bytes = c.get_or<bytes_t>("page_bytes", s.param_cma.page_bytes);
        s.param_cma.threads = c.get_or<int>("threads", s.param_cma.threads);
        c.done();
    }
    if (o.has("working_cma")) {
        Obj c(o.child("working_cma"), origin + ".working_cma");
        s.working_cma.region_bytes = c.get_or<bytes_t>("region_bytes", 2'000'000'000ULL);
        c.done();
    }
    o.done();

    s.working_cma.base = 0x4'0000'0000ULL;
    s.working_cma.occupied_fraction = 0.0;
    if (s.working_cma.region_bytes == s.param_cma.region_bytes &&
        s.working_cma.base == s.param_cma.base)
        s.working_cma.region_bytes = 2'000'000'000ULL;
    return s;
}

Scenario load_scenario(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in)
        throw SchemaError("cannot open scenario file: " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    Scenario s = parse_scenario_json(ss.str(), file.filename().string());
    if (s.name == "scenario")
        s.name = file.stem().string();
    return s;
}

std::string scenario_to_json(const Scenario& s) {
    json j;
    j["name"] = s.name;
    j["model"] = model_to_json(s.model);
    json hwj = hardware_to_json(s.hw);
    if (!hwj.empty())
        j["hardware"] = hwj;
    j["policy"] = to_string(s.policy);
    j["baseline"] = to_string(s.baseline);
    if (s.cached_fraction != 0.0)
        j["cached_fraction"] = s.cached_fraction;
    if (s.prompt_tokens_override >= 0)
        j["prompt_tokens"] = s.prompt_tokens_override;
    if (s.decode_tokens > 0)
        j["decode_tokens"] = s.decode_tokens;
    if (s.npu_sharing)
        j["npu_sharing"] = true;
    if (s.naive_npu_switch)
        j["npu_switch"] = "naive";
    j["seed"] = s.seed;
    j["chunk_bytes"] = s.chunk_bytes;
    j["pressure"] = {{"cma_occupied_fraction", s.pressure.cma_occupied_fraction}};
    if (s.pressure.post_inference_signal_bytes > 0)
        j["pressure"]["post_inference_signal_bytes"] = s.pressure.post_inference_signal_bytes;
    j["cma"] = {{"region_bytes", s.param_cma.region_bytes},
                {"page_bytes", s.param_cma.page_bytes},
                {"threads", s.param_cma.threads}};
    j["working_cma"] = {{"region_bytes", s.working_cma.region_bytes}};
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

std::string RunSummary::to_json() const {
    json j;
    j["scenario"] = scenario;
    j["seed"] = seed;
    j["baseline"] = baseline;
    j["policy"] = policy;
    j["cached_fraction"] = cached_fraction;
    j["ttft_us"] = ttft_us;
    j["paths"] = {{"io_us", io_path_us},
                  {"cpu_us", cpu_path_us},
                  {"compute_us", compute_path_us},
                  {"lower_bound_us", lower_bound_us}};
    j["lower_bound_gap"] = lower_bound_gap;
    j["busy"] = {{"init_us", init_us},
                 {"alloc_us", alloc_us},
                 {"load_us", load_us},
                 {"decrypt_us", decrypt_us},
                 {"cpu_compute_us", cpu_compute_us},
                 {"npu_compute_us", npu_compute_us}};
    j["bubble_count"] = bubble_count;
    if (!release_plan.empty())
        j["release_plan"] = release_plan;
    if (decode_total_us > 0) {
        j["decode"] = {{"tokens_per_s", decode_tokens_per_s},
                       {"switch_overhead_fraction", switch_overhead_fraction},
                       {"total_us", decode_total_us},
                       {"switch_us", decode_switch_us}};
    }
    return j.dump(2) + "\n";
}

RunArtifacts run_scenario(const Scenario& s) {
    Scenario sc = s;
    sc.model.prompt_tokens = sc.effective_prompt_tokens();

    HardwareModel hw = sc.hw;
    hw.cma_threads = sc.param_cma.threads;
    hw.validate();

    CmaSpec pcma = sc.param_cma;
    pcma.occupied_fraction = sc.pressure.cma_occupied_fraction;

    GraphOptions gopt;
    RestorationOptions ropt;
    micros_t init_cost = hw.checkpoint_restore_us;
    double cache_frac = sc.cached_fraction;
    switch (sc.baseline) {
    case Baseline::TzLlm:
        break;
    case Baseline::Strawman:
        gopt.cpu_only = true;
        ropt.sequential_phases = true;
        init_cost = hw.framework_init_us;
        cache_frac = 0.0;
        break;
    case Baseline::ReeFlash:
        ropt.include_decrypt = false;
        init_cost = 0;
        pcma.occupied_fraction = 0.0; // buddy allocation, nothing to migrate
        break;
    case Baseline::ReeMemory:
        init_cost = 0;
        cache_frac = 1.0;
        break;
    }

    ComputationGraph g = build_graph(sc.model, gopt);
    int group_total = static_cast<int>(g.groups.size());
    long kk = std::lround(cache_frac * group_total);
    int k = static_cast<int>(std::clamp(kk, 0L, static_cast<long>(group_total)));
    std::set<int> cached;
    for (int i = 0; i < k; ++i)
        cached.insert(i);

    ExtendedGraph eg = insert_restoration_ops(g, cached, ropt);
    if (!ropt.sequential_phases)
        eg = split_micro_ops(std::move(eg), sc.chunk_bytes);
    annotate_alloc_costs(eg, pcma, hw);
    CriticalPaths cp = critical_paths(eg, hw);

    CmaSpec wcma = sc.working_cma;
    SecureMemoryState mem(pcma, wcma);
    for (int cg : cached)
        mem.preload_group(cg, g.groups[static_cast<size_t>(cg)].byte_size, hw);

    // Working region: fixed buffers plus prompt-sized KV cache at inference
    // start.
    bytes_t working_start = sc.model.working_fixed_bytes +
                            static_cast<bytes_t>(sc.model.prompt_tokens) *
                                sc.model.kv_bytes_per_token;
    if (working_start > 0) {
        mem.extend_allocated(mem.working_region(), working_start, mem.working_cma(), hw);
        mem.extend_protected(mem.working_region(),
                             mem.working_region().allocated_watermark -
                                 mem.working_region().protected_watermark);
    }

    PrefillOptions popt;
    popt.policy = sc.policy;
    popt.init_cost_us = init_cost;
    Timeline tl = run_prefill(eg, hw, popt, mem);
    BubbleReport bubbles = detect_bubbles(tl, eg);

    DecodeResult dec{};
    if (sc.decode_tokens > 0) {
        HardwareModel dhw = hw;
        if (sc.naive_npu_switch)
            dhw.npu_world_switch_us = hw.naive_reinit_us;
        npu::CoDriverWorld world;
        world.set_event_recording(false);
        dec = run_decoding(sc.model, dhw, sc.decode_tokens, sc.npu_sharing, &world, &mem);
    }

    // Idle: REE pressure signal drives the release plan (reverse topological).
    std::vector<int> plan = mem.plan_cache(sc.pressure.post_inference_signal_bytes);
    mem.apply_release_plan(plan);
    if (mem.working_region().allocated_watermark > 0)
        mem.shrink(mem.working_region(), mem.working_region().allocated_watermark,
                   mem.working_cma());

    RunArtifacts a;
    a.summary.scenario = sc.name;
    a.summary.seed = sc.seed;
    a.summary.baseline = to_string(sc.baseline);
    a.summary.policy = to_string(sc.policy);
    a.summary.cached_fraction = cache_frac;
    a.summary.ttft_us = tl.ttft;
    a.summary.io_path_us = cp.io_path;
    a.summary.cpu_path_us = cp.cpu_path;
    a.summary.compute_path_us = cp.compute_path;
    a.summary.lower_bound_us = cp.lower_bound;
    a.summary.lower_bound_gap =
        cp.lower_bound > 0
            ? static_cast<double>(tl.ttft) / static_cast<double>(cp.lower_bound) - 1.0
            : 0.0;
    a.summary.init_us = init_cost;
    a.summary.alloc_us = tl.busy("alloc");
    a.summary.load_us = tl.busy("load");
    a.summary.decrypt_us = tl.busy("decrypt");
    a.summary.cpu_compute_us = tl.busy("cpu_compute");
    a.summary.npu_compute_us = tl.busy("npu_compute");
    a.summary.bubble_count = static_cast<int>(bubbles.bubbles.size());
    a.summary.release_plan = plan;
    a.summary.decode_tokens_per_s = dec.tokens_per_second;
    a.summary.switch_overhead_fraction = dec.switch_overhead_fraction;
    a.summary.decode_total_us = dec.total_us;
    a.summary.decode_switch_us = dec.switch_us;

    tl.memtrace = mem.trace();
    a.graph = std::move(eg);
    a.timeline = std::move(tl);
    a.bubbles = std::move(bubbles);
    return a;
}

std::filesystem::path write_run_outputs(const RunArtifacts& a,
                                        const std::filesystem::path& out_root) {
    namespace fs = std::filesystem;
    fs::path dir = out_root / (a.summary.scenario + "-seed" + std::to_string(a.summary.seed));
    fs::create_directories(dir);
    {
        std::ofstream f(dir / "summary.json", std::ios::binary);
        f << a.summary.to_json();
    }
    {
        std::ofstream f(dir / "trace.txt", std::ios::binary);
        f << "# lane op_id kind group start_us end_us\n";
        for (const auto& line : a.timeline.trace_lines(a.graph))
            f << line << '\n';
    }
    {
        std::ofstream f(dir / "memtrace.txt", std::ios::binary);
        f << "# time_us op region bytes allocated_wm protected_wm migration_us\n";
        for (const auto& r : a.timeline.memtrace)
            f << r.time_us << ' ' << r.op << ' ' << r.region << ' ' << r.bytes << ' '
              << r.allocated_watermark << ' ' << r.protected_watermark << ' '
              << r.migration_cost_us << '\n';
    }
    {
        std::ofstream f(dir / "bubbles.txt", std::ios::binary);
        f << "# lane start_us end_us blocked cause\n";
        for (const auto& line : a.bubbles.lines(a.graph))
            f << line << '\n';
    }
    return dir;
}

std::vector<SweepRow> sweep(const Scenario& base, const std::string& parameter,
                            const std::vector<double>& values) {
    std::vector<SweepRow> rows;
    for (double v : values) {
        Scenario sc = base;
        if (parameter == "cached_fraction") {
            sc.cached_fraction = v;
        } else if (parameter == "prompt_tokens") {
            sc.prompt_tokens_override = static_cast<int>(v);
        } else if (parameter == "chunk_bytes") {
            sc.chunk_bytes = static_cast<bytes_t>(v);
        } else if (parameter == "pressure") {
            sc.pressure.cma_occupied_fraction = v;
        } else {
            throw UnknownParameter("cannot sweep over '" + parameter + "'");
        }
        sc.name = base.name;
        rows.push_back({v, run_scenario(sc).summary});
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Bundled scenarios
// ---------------------------------------------------------------------------

namespace {

// Decode world-switch costs are calibrated per model so the per-job switching
// lands in the measured 2.3%..5.7% band of decode time.
const std::vector<BundledModel> kModels = {
    {"tinyllama-1b", 1'000'000'000ULL, 22, 34},
    {"qwen-3b", 3'300'000'000ULL, 36, 22},
    {"phi-3.8b", 3'700'000'000ULL, 32, 30},
    {"llama-8b", 7'900'000'000ULL, 32, 149},
};

const BundledModel& find_model(const std::string& key) {
    for (const auto& m : kModels)
        if (m.key == key)
            return m;
    throw UnknownParameter("unknown bundled model: " + key);
}

micros_t at_least_one(double us) { return std::max<micros_t>(1, std::llround(us)); }

bytes_t kv_bytes_for(const std::string& key) {
    if (key == "tinyllama-1b")
        return 90'112;
    if (key == "qwen-3b")
        return 147'456;
    if (key == "phi-3.8b")
        return 196'608;
    return 262'144;
}

} // namespace

const std::vector<BundledModel>& bundled_models() { return kModels; }

ModelSpec make_bundled_model(const std::string& key, int prompt_tokens) {
    const BundledModel& bm = find_model(key);
    ModelSpec m;
    m.name = bm.key;
    m.layer_count = bm.layers;
    m.prompt_tokens = prompt_tokens;
    m.param_bytes = bm.bytes;
    m.kv_bytes_per_token = kv_bytes_for(key);
    m.working_fixed_bytes = 256ull << 20;
    m.layer_ops = {
        {"attn_norm", Hw::Cpu, false},
        {"attn_matmul", Hw::Npu, true},
        {"ffn_act", Hw::Cpu, false},
        {"ffn_matmul", Hw::Npu, true},
    };

    // Prefill totals scale with parameter bytes and prompt length; the NPU
    // runs matrix multiplies ~12.5x faster than the CPU fallback. Decoding is
    // memory-bound: one token sweeps all parameters at ~20 GB/s.
    const double L = bm.layers;
    auto fill_bucket = [&](int bucket) {
        double npu_total = 13'120'000.0 * (static_cast<double>(bm.bytes) / 7.9e9) *
                           (static_cast<double>(bucket) / 512.0);
        double cpu_total = 0.12 * npu_total;
        m.set_duration("attn_norm", Hw::Cpu, bucket, at_least_one(0.5 * cpu_total / L));
        m.set_duration("ffn_act", Hw::Cpu, bucket, at_least_one(0.5 * cpu_total / L));
        m.set_duration("attn_matmul", Hw::Npu, bucket, at_least_one(0.45 * npu_total / L));
        m.set_duration("ffn_matmul", Hw::Npu, bucket, at_least_one(0.55 * npu_total / L));
        m.set_duration("attn_matmul", Hw::Cpu, bucket, at_least_one(12.5 * 0.45 * npu_total / L));
        m.set_duration("ffn_matmul", Hw::Cpu, bucket, at_least_one(12.5 * 0.55 * npu_total / L));
    };
    for (int b : {32, 128, 512})
        fill_bucket(b);
    if (prompt_tokens != 32 && prompt_tokens != 128 && prompt_tokens != 512)
        fill_bucket(prompt_tokens);

    double dec_npu = static_cast<double>(bm.bytes) / 20'000.0 / 1e3; // us per token on the NPU
    m.set_duration("attn_norm", Hw::Cpu, 1, at_least_one(0.05 * dec_npu / L));
    m.set_duration("ffn_act", Hw::Cpu, 1, at_least_one(0.05 * dec_npu / L));
    m.set_duration("attn_matmul", Hw::Npu, 1, at_least_one(0.45 * dec_npu / L));
    m.set_duration("ffn_matmul", Hw::Npu, 1, at_least_one(0.55 * dec_npu / L));
    m.set_duration("attn_matmul", Hw::Cpu, 1, at_least_one(1.3 * 0.45 * dec_npu / L));
    m.set_duration("ffn_matmul", Hw::Cpu, 1, at_least_one(1.3 * 0.55 * dec_npu / L));
    return m;
}

Scenario make_prefill_scenario(const std::string& model_key, int prompt_tokens) {
    Scenario s;
    s.name = model_key + "-p" + std::to_string(prompt_tokens);
    s.model = make_bundled_model(model_key, prompt_tokens);
    s.policy = PolicyKind::GreedyPriority;
    s.baseline = Baseline::TzLlm;
    s.cached_fraction = 0.2;
    s.pressure.cma_occupied_fraction = 1.0;
    s.seed = 1;
    s.chunk_bytes = 32ull << 20;
    s.param_cma.threads = 4;
    s.working_cma.base = 0x4'0000'0000ULL;
    s.working_cma.region_bytes = 2'000'000'000ULL;
    s.working_cma.occupied_fraction = 0.0;
    return s;
}

Scenario make_strawman_scenario() {
    Scenario s = make_prefill_scenario("llama-8b", 512);
    s.name = "strawman-llama8b";
    s.baseline = Baseline::Strawman;
    s.policy = PolicyKind::TopologicalFifo; // no scheduling freedom anyway
    s.cached_fraction = 0.0;
    s.param_cma.threads = 1;
    return s;
}

Scenario make_decode_scenario(const std::string& model_key) {
    Scenario s = make_prefill_scenario(model_key, 128);
    s.name = model_key + "-decode";
    s.cached_fraction = 1.0; // parameters resident during decoding
    s.decode_tokens = 64;
    s.npu_sharing = true;
    s.hw.npu_world_switch_us = find_model(model_key).decode_switch_us;
    return s;
}

Scenario make_fig5_scenario() {
    Scenario s;
    s.name = "fig5-micro";
    ModelSpec m;
    m.name = "fig5-micro";
    m.prompt_tokens = 4;
    for (int gi = 0; gi < 4; ++gi) {
        TensorGroupSpec g;
        g.index = gi;
        g.byte_size = 8000;
        m.groups.push_back(g);
    }
    auto op = [&](const std::string& kind, Hw hw, micros_t us, int group,
                  std::vector<int> preds) {
        ComputeOpSpec o;
        o.kind = kind;
        o.hw = hw;
        o.duration_us = us;
        o.tensor_group = group;
        o.preds = std::move(preds);
        m.ops.push_back(std::move(o));
    };
    op("attn", Hw::Cpu, 200, 0, {});
    op("mm", Hw::Npu, 400, 0, {0});
    op("mm", Hw::Npu, 400, 1, {1});
    op("mm", Hw::Npu, 400, 2, {2});
    op("mm", Hw::Npu, 400, 3, {3});
    s.model = std::move(m);

    s.hw.io_bytes_per_s = 2.0e7;           // load: 400 us per group
    s.hw.decrypt_bytes_per_s = 2.0e7;      // decrypt: 400 us
    s.hw.cma_migrate_1t_bytes_per_s = 8192.0 / 300e-6; // alloc: 300 us
    s.hw.cma_migrate_4t_bytes_per_s = s.hw.cma_migrate_1t_bytes_per_s;
    s.hw.checkpoint_restore_us = 0;
    s.policy = PolicyKind::GreedyPriority;
    s.chunk_bytes = 2048;
    s.param_cma.region_bytes = 1'000'000;
    s.param_cma.threads = 1;
    s.working_cma.base = 0x4'0000'0000ULL;
    s.working_cma.region_bytes = 1'000'000;
    s.seed = 1;
    return s;
}

std::vector<Scenario> bundled_prefill_family() {
    std::vector<Scenario> out;
    for (const auto& m : kModels)
        for (int p : {32, 128, 512})
            out.push_back(make_prefill_scenario(m.key, p));
    return out;
}

// ---------------------------------------------------------------------------
// Analytic caching threshold
// ---------------------------------------------------------------------------

double analytic_cache_threshold(const Scenario& s, const std::vector<double>& grid) {
    Scenario sc = s;
    sc.model.prompt_tokens = sc.effective_prompt_tokens();
    HardwareModel hw = sc.hw;
    hw.cma_threads = sc.param_cma.threads;
    ComputationGraph g = build_graph(sc.model);
    int n = static_cast<int>(g.groups.size());

    micros_t compute_path = 0, cpu_compute = 0;
    std::vector<micros_t> start_of_op(g.ops.size() + 1, 0);
    for (const auto& op : g.ops) {
        start_of_op[static_cast<size_t>(op.index)] = compute_path;
        compute_path += op.duration_us;
        if (op.hw == Hw::Cpu)
            cpu_compute += op.duration_us;
    }
    double rate = compute_path > 0
                      ? 1.0 - static_cast<double>(cpu_compute) / static_cast<double>(compute_path)
                      : 1.0;
    rate = std::max(rate, 0.05);
    micros_t ttft_full = hw.checkpoint_restore_us + compute_path;
    micros_t margin = static_cast<micros_t>(0.01 * static_cast<double>(ttft_full));

    std::vector<double> sorted = grid;
    std::sort(sorted.begin(), sorted.end());
    for (double f : sorted) {
        long kk = std::lround(f * n);
        int k = static_cast<int>(std::clamp(kk, 0L, static_cast<long>(n)));
        std::set<int> cached;
        for (int i = 0; i < k; ++i)
            cached.insert(i);
        ExtendedGraph eg = insert_restoration_ops(g, cached);
        CmaSpec pcma = sc.param_cma;
        pcma.occupied_fraction = sc.pressure.cma_occupied_fraction;
        annotate_alloc_costs(eg, pcma, hw);

        // Dedicated-lane pipeline recurrence; the CPU restoration lane runs
        // at the share left over from CPU compute (conservative).
        micros_t cpu_t = 0, io_t = 0;
        micros_t worst = 0;
        for (int gi = k; gi < n; ++gi) {
            micros_t alloc_us = 0;
            for (const auto& node : eg.nodes)
                if (node.kind == OpKind::Alloc && node.group && *node.group == gi)
                    alloc_us = node.duration_us;
            bytes_t bytes = g.groups[static_cast<size_t>(gi)].byte_size;
            micros_t a = static_cast<micros_t>(std::llround(static_cast<double>(alloc_us) / rate));
            micros_t l = load_duration(bytes, hw);
            micros_t d = static_cast<micros_t>(
                std::llround(static_cast<double>(decrypt_duration(bytes, hw)) / rate));
            cpu_t += a;
            io_t = std::max(io_t, cpu_t) + l;
            cpu_t = std::max(cpu_t, io_t) + d;
            int first = g.groups[static_cast<size_t>(gi)].consumed_by.front();
            micros_t sg = start_of_op[static_cast<size_t>(first)];
            worst = std::max(worst, cpu_t - sg);
        }
        if (worst <= margin)
            return f;
    }
    return 1.0;
}

// ---------------------------------------------------------------------------
// Figure reproduction
// ---------------------------------------------------------------------------

bool FigureReport::pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const FigureCheck& c) { return c.pass; });
}

namespace {

std::string fmt_us(micros_t us) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    os << static_cast<double>(us) / 1e6 << "s";
    return os.str();
}

FigureReport figure9() {
    FigureReport rep;
    rep.figure = "fig9";
    for (bool stressed : {true, false}) {
        for (const auto& base : bundled_prefill_family()) {
            Scenario sc = base;
            if (!stressed)
                sc.pressure.cma_occupied_fraction = 0.0;
            auto a = run_scenario(sc);
            const auto& s = a.summary;
            std::ostringstream detail;
            detail << sc.name << (stressed ? " stress" : " no-stress") << " io="
                   << fmt_us(s.io_path_us) << " cpu=" << fmt_us(s.cpu_path_us)
                   << " compute=" << fmt_us(s.compute_path_us) << " ttft=" << fmt_us(s.ttft_us)
                   << " gap=" << s.lower_bound_gap * 100.0 << "%";
            FigureCheck c;
            c.name = sc.name + (stressed ? "/stress" : "/no-stress");
            c.pass = s.lower_bound_gap <= 0.15 && s.ttft_us >= s.lower_bound_us;
            c.detail = detail.str();
            rep.checks.push_back(std::move(c));
            std::ostringstream row;
            row << sc.name << (stressed ? " stress " : " no-stress ") << s.lower_bound_us << ' '
                << s.ttft_us;
            rep.plot_rows.push_back(row.str());
        }
    }
    return rep;
}

FigureReport figure13() {
    FigureReport rep;
    rep.figure = "fig13";
    double best_improvement = 0.0;
    for (const auto& base : bundled_prefill_family()) {
        Scenario pre = base;
        pre.policy = PolicyKind::GreedyPriority;
        Scenario nopre = base;
        nopre.policy = PolicyKind::GreedyPriorityNoPreempt;
        micros_t with_p = run_scenario(pre).summary.ttft_us;
        micros_t without_p = run_scenario(nopre).summary.ttft_us;
        double improvement =
            without_p > 0
                ? 1.0 - static_cast<double>(with_p) / static_cast<double>(without_p)
                : 0.0;
        best_improvement = std::max(best_improvement, improvement);
        FigureCheck c;
        c.name = base.name;
        c.pass = with_p <= without_p;
        std::ostringstream detail;
        detail << "preempt=" << fmt_us(with_p) << " no-preempt=" << fmt_us(without_p)
               << " improvement=" << improvement * 100.0 << "%";
        c.detail = detail.str();
        rep.checks.push_back(std::move(c));
        std::ostringstream row;
        row << base.name << ' ' << with_p << ' ' << without_p;
        rep.plot_rows.push_back(row.str());
    }
    FigureCheck c;
    c.name = "max-improvement";
    c.pass = best_improvement >= 0.10;
    std::ostringstream detail;
    detail << "best preemption improvement " << best_improvement * 100.0 << "% (need >= 10%)";
    c.detail = detail.str();
    rep.checks.push_back(std::move(c));
    return rep;
}

FigureReport figure14() {
    FigureReport rep;
    rep.figure = "fig14";
    std::vector<double> grid;
    for (int i = 0; i <= 10; ++i)
        grid.push_back(i / 10.0);
    for (const auto& base : bundled_prefill_family()) {
        auto rows = sweep(base, "cached_fraction", grid);
        bool monotone = true;
        for (size_t i = 1; i < rows.size(); ++i)
            if (rows[i].summary.ttft_us > rows[i - 1].summary.ttft_us)
                monotone = false;
        double threshold = analytic_cache_threshold(base, grid);
        micros_t full = rows.back().summary.ttft_us;
        bool flat_beyond = true;
        for (const auto& r : rows)
            if (r.value >= threshold &&
                static_cast<double>(r.summary.ttft_us) > 1.02 * static_cast<double>(full))
                flat_beyond = false;
        FigureCheck c;
        c.name = base.name;
        c.pass = monotone && flat_beyond;
        std::ostringstream detail;
        detail << "monotone=" << (monotone ? "yes" : "no") << " threshold=" << threshold
               << " ttft(100%)=" << fmt_us(full) << " flat-beyond-threshold="
               << (flat_beyond ? "yes" : "no");
        c.detail = detail.str();
        rep.checks.push_back(std::move(c));
        for (const auto& r : rows) {
            std::ostringstream row;
            row << base.name << ' ' << r.value << ' ' << r.summary.ttft_us;
            rep.plot_rows.push_back(row.str());
        }
    }
    return rep;
}

micros_t node_start(const Timeline& tl, int node) {
    micros_t best = -1;
    for (const auto& lane : tl.lanes)
        for (const auto& iv : lane.intervals)
            if (iv.node == node && (best < 0 || iv.start < best))
                best = iv.start;
    return best;
}

FigureReport figure5() {
    FigureReport rep;
    rep.figure = "fig5";
    Scenario base = make_fig5_scenario();

    auto run_with = [&](PolicyKind policy, double cached) {
        Scenario sc = base;
        sc.policy = policy;
        sc.cached_fraction = cached;
        return run_scenario(sc);
    };

    auto fifo = run_with(PolicyKind::TopologicalFifo, 0.0);
    auto greedy = run_with(PolicyKind::GreedyPriorityNoPreempt, 0.0);
    auto preempt = run_with(PolicyKind::GreedyPriority, 0.0);
    auto cached = run_with(PolicyKind::GreedyPriority, 0.5);

    // First NPU computation starts earlier once decryption of group 0 is
    // prioritized over later allocations.
    micros_t fifo_npu0 = node_start(fifo.timeline, 1);
    micros_t greedy_npu0 = node_start(greedy.timeline, 1);
    {
        FigureCheck c;
        c.name = "priority-shrinks-initial-bubble";
        c.pass = greedy_npu0 >= 0 && fifo_npu0 > greedy_npu0;
        std::ostringstream d;
        d << "npu op0 start: fifo=" << fifo_npu0 << "us greedy=" << greedy_npu0 << "us";
        c.detail = d.str();
        rep.checks.push_back(std::move(c));
    }
    // Caching the leading groups removes the restoration wait entirely: the
    // first compute operator starts at the epoch.
    {
        micros_t start0 = node_start(cached.timeline, 0);
        FigureCheck c;
        c.name = "caching-eliminates-initial-bubble";
        c.pass = start0 == cached.timeline.epoch;
        std::ostringstream d;
        d << "first compute start=" << start0 << "us epoch=" << cached.timeline.epoch << "us";
        c.detail = d.str();
        rep.checks.push_back(std::move(c));
    }
    // Preemption yields at micro-op boundaries; without it the running
    // restoration operator finishes first.
    {
        auto count_preempted = [](const Timeline& tl) {
            int n = 0;
            for (const auto& lane : tl.lanes)
                for (const auto& iv : lane.intervals)
                    if (iv.preempted)
                        ++n;
            return n;
        };
        FigureCheck c;
        c.name = "preemption-at-micro-op-boundaries";
        int with_p = count_preempted(preempt.timeline);
        int without_p = count_preempted(greedy.timeline);
        c.pass = with_p > 0 && without_p == 0;
        std::ostringstream d;
        d << "preempted intervals: preempt=" << with_p << " no-preempt=" << without_p;
        c.detail = d.str();
        rep.checks.push_back(std::move(c));
    }
    // A compute operator blocked by its own group's decryption shows up as a
    // bubble attributed to that decrypt edge.
    {
        bool found = false;
        std::string which;
        for (const auto& b : preempt.bubbles.bubbles) {
            if (b.blocking_pred < 0)
                continue;
            const Node& cause = preempt.graph.node(b.blocking_pred);
            const Node& blocked = preempt.graph.node(b.blocked_node);
            if (cause.kind == OpKind::Decrypt && is_compute(blocked.kind) &&
                cause.group == blocked.group) {
                found = true;
                which = "decrypt " + std::to_string(*cause.group) + " -> compute op " +
                        std::to_string(blocked.id);
                break;
            }
        }
        FigureCheck c;
        c.name = "bubble-attributed-to-decrypt-edge";
        c.pass = found;
        c.detail = found ? which : "no decrypt->compute bubble found";
        rep.checks.push_back(std::move(c));
    }
    return rep;
}

} // namespace

FigureReport figure_repro(const std::string& figure_id) {
    if (figure_id == "fig5")
        return figure5();
    if (figure_id == "fig9")
        return figure9();
    if (figure_id == "fig13")
        return figure13();
    if (figure_id == "fig14")
        return figure14();
    throw UnknownParameter("unknown figure id: " + figure_id +
                           " (expected fig5, fig9, fig13 or fig14)");
}

} // namespace tzsim
