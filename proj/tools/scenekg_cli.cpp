// Command-line front end: one subcommand per pipeline stage.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scenekg/remote_planner.hpp"
#include "scenekg/scenekg.hpp"

namespace fs = std::filesystem;
using namespace scenekg;

namespace {

struct Common {
    std::string config_path;
    int threads = 1;
};

EngineConfig load_engine_config(const Common& c) {
    std::string path = c.config_path;
    if (path.empty())
        if (const char* env = std::getenv("SCENEKG_CONFIG")) path = env;
    return path.empty() ? EngineConfig{} : load_config(path);
}

std::string resolved_config_path(const Common& c) {
    if (!c.config_path.empty()) return c.config_path;
    const char* env = std::getenv("SCENEKG_CONFIG");
    return env ? env : "";
}

void write_manifest(const std::string& path, Manifest m) {
    write_file(path, manifest_json(m));
}

std::string manifest_beside(const std::string& out) { return out + ".manifest.json"; }

// Program text from a file when the argument names one, else the argument.
std::string text_or_file(const std::string& arg) {
    std::error_code ec;
    if (fs::is_regular_file(arg, ec)) return read_file(arg);
    return arg;
}

std::string detections_path(const std::string& in) {
    std::error_code ec;
    if (fs::is_directory(in, ec)) return (fs::path(in) / "detections.jsonl").string();
    return in;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir, int qa_count) {
    StageTimer total;
    const Schema schema = default_schema();
    const WorldSpec spec = parse_world_spec(read_file(spec_path), schema);
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);

    StageTimer t_world;
    const World world = generate_world(spec, schema);
    const double world_s = t_world.seconds();

    StageTimer t_det;
    const auto bundles = simulate_detectors(world, spec, schema);
    write_file((dir / "detections.jsonl").string(), write_detections(bundles));
    write_file((dir / "truth.jsonl").string(), write_truth(world));
    const double det_s = t_det.seconds();

    StageTimer t_qa;
    const auto& qf = world.frames.at(static_cast<std::size_t>(spec.query_frame()));
    const SceneKg gt = build_gt_kg(qf, schema);
    export_kg(gt, (dir / "gt_kg.json").string());
    std::string qa;
    for (const auto& item : generate_qa(gt, schema, qa_count, spec.seed)) qa += qa_record(item) + "\n";
    write_file((dir / "qa.jsonl").string(), qa);
    const double qa_s = t_qa.seconds();

    Manifest m;
    m.command = "synth";
    m.inputs = {spec_path};
    m.config_hash = hex64(fnv1a(read_file(spec_path)));
    m.seed = spec.seed;
    m.stage_seconds = {{"world", world_s}, {"detectors", det_s}, {"qa", qa_s}, {"total", total.seconds()}};
    write_manifest((dir / "manifest.json").string(), m);
    std::cout << "wrote " << bundles.size() << " frames, " << world.frames.front().entities.size() << " entities to "
              << out_dir << "\n";
    return 0;
}

int cmd_pool(const Common& c, const std::string& in, const std::string& out) {
    StageTimer total;
    const EngineConfig cfg = load_engine_config(c);
    const Schema schema = default_schema();
    const std::string path = detections_path(in);
    StageTimer t_load;
    const auto bundles = load_detections(path, schema);
    const double load_s = t_load.seconds();
    StageTimer t_pool;
    const auto pooled = run_pool(bundles, cfg, c.threads);
    const double pool_s = t_pool.seconds();
    write_file(out, write_pooled(pooled));
    std::size_t n = 0;
    for (const auto& f : pooled.frames) n += f.candidates.size();

    Manifest m{"pool", {path, resolved_config_path(c)}, config_hash(cfg), cfg.seed,
               {{"load", load_s}, {"pool", pool_s}, {"total", total.seconds()}}};
    write_manifest(manifest_beside(out), m);
    std::cout << "pooled " << n << " candidates over " << pooled.frames.size() << " frames\n";
    return 0;
}

int cmd_refine(const Common& c, const std::string& in, const std::string& out, const std::string& truth,
               const std::string& labeled_out) {
    StageTimer total;
    const EngineConfig cfg = load_engine_config(c);
    const Schema schema = default_schema();
    const auto pooled = parse_pooled(read_file(in), schema);
    StageTimer t_ref;
    const auto refined = run_refine(pooled, schema, cfg, c.threads);
    const double ref_s = t_ref.seconds();
    write_file(out, write_refined(refined));
    if (!labeled_out.empty()) {
        if (truth.empty()) fail(ErrorKind::invalid_argument, "--labeled-out needs --truth");
        const World w = parse_truth(read_file(truth), schema);
        std::string text;
        for (const auto& s : label_candidates(refined, w, cfg.match_threshold)) text += labeled_record(s) + "\n";
        write_file(labeled_out, text);
    }
    std::size_t kept = 0, n = 0;
    for (const auto& f : refined.frames) {
        kept += f.result.z.count();
        n += f.candidates.size();
    }
    Manifest m{"refine", {in, resolved_config_path(c)}, config_hash(cfg), cfg.seed,
               {{"refine", ref_s}, {"total", total.seconds()}}};
    if (!truth.empty()) m.inputs.push_back(truth);
    write_manifest(manifest_beside(out), m);
    std::cout << "kept " << kept << " of " << n << " candidates\n";
    return 0;
}

int cmd_build_kg(const Common& c, const std::string& in, const std::string& out, std::optional<int> frame) {
    StageTimer total;
    const EngineConfig cfg = load_engine_config(c);
    const Schema schema = default_schema();
    const auto refined = parse_refined(read_file(in), schema);
    std::vector<int> frames;
    for (const auto& f : refined.frames) frames.push_back(f.ego.frame);
    const int target = frame ? *frame : middle_frame(frames);
    const SceneKg kg = kg_from_refined(refined, target, schema, cfg);
    export_kg(kg, out);
    Manifest m{"build-kg", {in, resolved_config_path(c)}, config_hash(cfg), cfg.seed, {{"total", total.seconds()}}};
    write_manifest(manifest_beside(out), m);
    std::cout << "frame " << target << ": " << kg.size() << " nodes\n";
    return 0;
}

int cmd_query(const Common& c, const std::string& kg_path, const std::string& program) {
    const EngineConfig cfg = load_engine_config(c);
    const Schema schema = default_schema();
    const SceneKg kg = import_kg(kg_path, &schema);
    const auto r = dsl::run_program(text_or_file(program), kg, cfg);
    for (const auto& t : r.trace) std::cout << "  " << t.render() << "\n";
    std::cout << "answer: " << r.answer.render() << "\n";
    return 0;
}

int cmd_ask(const Common& c, const std::string& kg_path, const std::string& question, const std::string& planner_spec,
            const std::string& transcript_out) {
    const EngineConfig cfg = load_engine_config(c);
    const Schema schema = default_schema();
    const SceneKg kg = import_kg(kg_path, &schema);
    std::unique_ptr<Planner> planner;
    if (planner_spec.rfind("scripted:", 0) == 0) {
        planner = std::make_unique<ScriptedPlanner>(read_file(planner_spec.substr(9)));
    } else if (planner_spec.rfind("remote:", 0) == 0) {
        planner = std::make_unique<RemotePlanner>(planner_spec.substr(7), cfg.planner_timeout_s, cfg.planner_retries);
    } else {
        fail(ErrorKind::invalid_argument, "--planner must be scripted:FILE or remote:URL");
    }
    const auto tmpl = default_prompt_template();
    tmpl.validate(schema);
    try {
        const auto [answer, session] = run_session(question, kg, *planner, tmpl, cfg);
        for (std::size_t i = 0; i < session.transcript.size(); ++i) {
            std::cout << "[" << i + 1 << "] action:\n" << session.transcript[i].action << "\n";
            std::cout << "    observation:\n" << session.transcript[i].observation << "\n";
        }
        if (!transcript_out.empty()) write_file(transcript_out, transcript_to_jsonl(session));
        std::cout << "state: " << to_string(session.state) << "\n";
        std::cout << "answer: " << answer.render() << "\n";
    } catch (const SessionError& e) {
        if (!transcript_out.empty()) write_file(transcript_out, transcript_to_jsonl(e.session()));
        throw;
    }
    return 0;
}

int cmd_eval(const Common& c, const std::string& qa_path, const std::string& kg_path, const std::string& gt_kg_path,
             const std::string& truth_path, const std::string& report, bool with_latency,
             const std::string& failures_out) {
    StageTimer total;
    const EngineConfig cfg = load_engine_config(c);
    const Schema schema = default_schema();
    const auto items = parse_qa(read_file(qa_path), schema);

    auto run = [&](const SceneKg& kg) {
        std::vector<AnswerRecord> answers;
        for (const auto& item : items) {
            const auto t0 = std::chrono::steady_clock::now();
            Answer a;
            if (item.frame != kg.frame()) {
                a = Answer::of_error("question frame " + std::to_string(item.frame) + " is not the graph's frame");
            } else {
                try {
                    a = dsl::run_program(item.program, kg, cfg).answer;
                } catch (const Error& e) {
                    a = Answer::of_error(e.structured());
                }
            }
            answers.push_back({a, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
        }
        return eval_qa(items, answers);
    };

    const SceneKg kg = import_kg(kg_path, &schema);
    const QaReport kg_report = run(kg);
    ObjectWriter w;
    w.field("qa_corpus", qa_path).field("items", items.size()).raw("kg", qa_report_json(kg_report, with_latency));
    std::cout << qa_report_table(kg_report, "QA accuracy on " + kg_path);
    if (!gt_kg_path.empty()) {
        const SceneKg gt = import_kg(gt_kg_path, &schema);
        const QaReport gt_report = run(gt);
        w.raw("gt_kg", qa_report_json(gt_report, with_latency));
        std::cout << qa_report_table(gt_report, "QA accuracy on " + gt_kg_path);
    }
    if (!truth_path.empty()) {
        const World world = parse_truth(read_file(truth_path), schema);
        const WorldFrame* wf = nullptr;
        for (const auto& f : world.frames)
            if (f.frame == kg.frame()) wf = &f;
        if (!wf) fail(ErrorKind::reference, "truth has no frame " + std::to_string(kg.frame()));
        std::vector<EvalObject> hyp;
        for (const auto& n : kg.nodes()) hyp.push_back({n.node_id, n.class_label, n.position});
        const auto mr = match_detections(truth_objects(*wf), hyp, cfg.match_threshold, true);
        w.raw("detection", match_report_json(mr));
        std::cout << match_report_table(mr, "Entities in " + kg_path + " against truth");
    }
    write_file(report, w.str() + "\n");
    if (!failures_out.empty()) {
        std::string text;
        for (std::size_t i : kg_report.failures) text += qa_record(items[i]) + "\n";
        write_file(failures_out, text);
    }
    Manifest m{"eval", {qa_path, kg_path}, config_hash(cfg), cfg.seed, {{"total", total.seconds()}}};
    if (!gt_kg_path.empty()) m.inputs.push_back(gt_kg_path);
    if (!truth_path.empty()) m.inputs.push_back(truth_path);
    write_manifest(manifest_beside(report), m);
    return 0;
}

int cmd_fit(const Common& c, const std::string& labeled, const std::string& out) {
    StageTimer total;
    const EngineConfig cfg = load_engine_config(c);
    const auto samples = parse_labeled(read_file(labeled));
    const EnergyParams p = fit_energy_params(samples, cfg);
    write_file(out, energy_params_to_text(p));
    Manifest m{"fit-energy", {labeled, resolved_config_path(c)}, config_hash(cfg), cfg.seed, {{"total", total.seconds()}}};
    write_manifest(manifest_beside(out), m);
    std::cout << energy_params_to_text(p);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Scene knowledge graphs from multi-detector evidence, and a query language over them"};
    app.require_subcommand(1);
    app.fallthrough();
    Common common;
    app.add_option("--config", common.config_path, "Engine config file (default: $SCENEKG_CONFIG)");
    app.add_option("--threads", common.threads, "Worker threads for per-frame stages")->check(CLI::PositiveNumber);

    std::string spec, out, in, kg, program, question, planner, qa, gt_kg, truth, report, labeled, labeled_out,
        transcript_out, failures_out;
    int qa_count = 1000;
    std::optional<int> frame;
    bool with_latency = false;

    auto* synth = app.add_subcommand("synth", "Generate a world, detector output and a QA corpus");
    synth->add_option("--spec", spec, "World spec file")->required();
    synth->add_option("--out", out, "Output directory")->required();
    synth->add_option("--qa-count", qa_count, "Number of questions");

    auto* pool = app.add_subcommand("pool", "Pool detections across detectors and recover gaps");
    pool->add_option("--in", in, "Detections file or synth output directory")->required();
    pool->add_option("--out", out, "Pooled candidates file")->required();

    auto* refine = app.add_subcommand("refine", "Select candidates by energy minimization");
    refine->add_option("--in", in, "Pooled candidates file")->required();
    refine->add_option("--out", out, "Refined file")->required();
    refine->add_option("--truth", truth, "Truth file, for --labeled-out");
    refine->add_option("--labeled-out", labeled_out, "Write candidates labeled against the truth");

    auto* build = app.add_subcommand("build-kg", "Build and export the scene graph of one frame");
    build->add_option("--in", in, "Refined file")->required();
    build->add_option("--out", out, "Graph file")->required();
    build->add_option("--frame", frame, "Frame (default: the middle frame)");

    auto* query = app.add_subcommand("query", "Run one program against a graph");
    query->add_option("--kg", kg, "Graph file")->required();
    query->add_option("--program", program, "Program text or file")->required();

    auto* ask = app.add_subcommand("ask", "Answer a question with a planner session");
    ask->add_option("--kg", kg, "Graph file")->required();
    ask->add_option("--question", question, "Question text")->required();
    ask->add_option("--planner", planner, "scripted:FILE or remote:URL")->required();
    ask->add_option("--transcript-out", transcript_out, "Write the session transcript");

    auto* eval = app.add_subcommand("eval", "Score gold programs against graphs");
    eval->add_option("--qa", qa, "QA corpus")->required();
    eval->add_option("--kg", kg, "Graph file")->required();
    eval->add_option("--gt-kg", gt_kg, "Ground-truth graph file");
    eval->add_option("--truth", truth, "Truth file, for entity matching");
    eval->add_option("--report", report, "Report file")->required();
    eval->add_flag("--with-latency", with_latency, "Include latency statistics in the report");
    eval->add_option("--failures", failures_out, "Write wrongly answered items");

    auto* fit = app.add_subcommand("fit-energy", "Fit energy parameters to labeled candidates");
    fit->add_option("--labeled", labeled, "Labeled candidates file")->required();
    fit->add_option("--out", out, "Parameters file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*synth) return cmd_synth(spec, out, qa_count);
        if (*pool) return cmd_pool(common, in, out);
        if (*refine) return cmd_refine(common, in, out, truth, labeled_out);
        if (*build) return cmd_build_kg(common, in, out, frame);
        if (*query) return cmd_query(common, kg, program);
        if (*ask) return cmd_ask(common, kg, question, planner, transcript_out);
        if (*eval) return cmd_eval(common, qa, kg, gt_kg, truth, report, with_latency, failures_out);
        if (*fit) return cmd_fit(common, labeled, out);
    } catch (const Error& e) {
        std::cerr << "error: " << e.structured() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
