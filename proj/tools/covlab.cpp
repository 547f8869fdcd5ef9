#include "covlab/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

using namespace covlab;
namespace fs = std::filesystem;

namespace {

struct Flags {
    std::string config, domain, phi, eps, p, radii, out, field;
    int grid_n = 0;
    std::optional<std::uint64_t> seed;
    int jobs = 0;
    bool no_richardson = false;
};

std::vector<double> parse_list(const std::string& s, const std::string& flag) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw InputError(flag + ": cannot parse '" + item + "'");
        }
    }
    if (out.empty()) throw InputError(flag + ": empty list");
    return out;
}

// family[:a[,b]], e.g. cone:1, tilted:0.5, sine:0.3,2
GraphSpec parse_domain(const std::string& s) {
    const auto colon = s.find(':');
    json j;
    j["family"] = s.substr(0, colon);
    const std::vector<double> args = colon == std::string::npos ? std::vector<double>{}
                                                                : parse_list(s.substr(colon + 1), "--domain");
    const std::string f = j["family"];
    auto need = [&](std::size_t n) {
        if (args.size() != n) throw InputError("--domain " + f + " takes " + std::to_string(n) + " parameter(s)");
    };
    if (f == "tilted") {
        need(1);
        j["slope"] = args[0];
    } else if (f == "cone") {
        if (!args.empty()) {
            need(1);
            j["M"] = args[0];
        }
    } else if (f == "sine") {
        need(2);
        j["amp"] = args[0];
        j["freq"] = args[1];
    } else {
        need(0);
    }
    return graph_spec_from_json(j);
}

Scenario resolve(const Flags& fl) {
    json cfg = json::object();
    if (!fl.config.empty()) {
        std::ifstream is(fl.config);
        if (!is) throw InputError("cannot read config " + fl.config);
        try {
            cfg = json::parse(is, nullptr, true, true);
        } catch (const json::parse_error& e) {
            throw InputError(fl.config + ": " + e.what());
        }
    }
    Scenario s = scenario_from_json(cfg);
    if (!cfg.contains("name") && !fl.domain.empty()) s.name = fl.domain.substr(0, fl.domain.find(':'));
    if (!fl.domain.empty()) s.domain = parse_domain(fl.domain);
    if (!fl.phi.empty()) s.map = map_spec_from_json(json{{"family", fl.phi}});
    if (!fl.eps.empty()) s.eps_sweep = parse_list(fl.eps, "--eps");
    if (fl.grid_n) s.grid_n = fl.grid_n;
    if (!fl.p.empty()) s.p_list = parse_list(fl.p, "--p");
    if (!fl.radii.empty()) s.boxes.radii = parse_list(fl.radii, "--radii");
    if (fl.seed) s.seed = *fl.seed;
    if (fl.no_richardson) s.richardson = false;
    if (!fl.out.empty()) s.output_dir = fl.out;
    else if (!cfg.contains("output_dir"))
        if (const char* env = std::getenv("COVLAB_OUT")) s.output_dir = env;
    validate(s);
    return s;
}

fs::path out_dir(const Scenario& s) {
    const fs::path d = fs::path(s.output_dir) / s.name;
    fs::create_directories(d);
    return d;
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot open " + path.string() + " for writing");
    os << j.dump(2) << '\n';
}

json header(const Scenario& s, const std::string& cmd) {
    return {{"schema_version", schema_version}, {"command", cmd}, {"config", scenario_to_json(s)}};
}

std::map<std::string, Field<double>> all_fields(const FrameField& ff, const CovField* cf) {
    std::map<std::string, Field<double>> out;
    for (auto& [k, f] : green_fields(ff)) out.emplace(k, std::move(f));
    if (cf)
        for (auto& [k, f] : cov_fields(*cf)) out.emplace(k, std::move(f));
    return out;
}

bool is_cov_field(const std::string& name) {
    static const std::set<std::string> names{"dvn-lambda", "C", "t-grad-B", "t-grad-O", "t-grad-J0", "J1",
                                             "A-rho-minus-A0"};
    return names.count(name) > 0;
}

int cmd_solve_green(const Scenario& s) {
    const auto dir = out_dir(s);
    json j = header(s, "solve-green");
    auto dom = std::make_shared<const GraphDomain>(build_domain(s.domain, 2, s.R, s.grid_n));
    const GreenStage st = green_stage(dom, s.grid_n, s.richardson);
    j["green"] = to_json(st);
    write_grid_binary((dir / "G.cvlg").string(), st.green().G, s.grid_n);
    write_grid_csv((dir / "G.csv").string(), st.green().G);
    if (const auto exact = closed_form_green(s.domain)) {
        const double tip = s.domain.family == "cone" ? 0.1 : 0.0;
        std::ofstream os(dir / "closed_form_error.csv");
        os.precision(17);
        os << "grid_n,h,max_rel_error,nodes\n";
        j["closed_form_error"] = json::array();
        for (int n : {s.grid_n / 2, s.grid_n}) {
            if (n < 64) continue;
            GreenOptions o;
            o.richardson = false;
            const GreenData gd = n == s.grid_n ? st.green() : solve_green(dom, n, o);
            const auto e = closed_form_error(gd, *exact, Row2::Zero(), tip);
            os << n << ',' << gd.h << ',' << e.max_rel << ',' << e.nodes << '\n';
            j["closed_form_error"].push_back({{"grid_n", n}, {"h", gd.h}, {"max_rel_error", e.max_rel}, {"nodes", e.nodes}});
        }
    }
    write_json(dir / "solve-green.json", j);
    return 0;
}

int cmd_verify_frame(const Scenario& s) {
    const auto dir = out_dir(s);
    Experiment ex;
    ex.scenario = s;
    run_base(ex, false, true);
    json j = header(s, "verify-frame");
    j["green"] = to_json(*ex.base);
    j["carleson"] = json::object();
    for (const auto& [k, v] : ex.base_carleson) {
        j["carleson"][k] = to_json(v);
        write_per_box_csv((dir / ("carleson_" + k + ".csv")).string(), v);
    }
    write_json(dir / "verify-frame.json", j);
    return 0;
}

int cmd_perturb(const Scenario& s) {
    const auto dir = out_dir(s);
    Experiment ex;
    ex.scenario = s;
    run_base(ex, false, false);
    const GreenStage& base = *ex.base;
    json j = header(s, "perturb");
    j["runs"] = json::array();
    std::ofstream beta(dir / "beta.csv");
    beta.precision(17);
    beta << "eps,y,t,beta,flagged\n";
    for (double eps : s.eps_sweep) {
        PerturbedRun run;
        run.eps = eps;
        MapSpec ms = s.map;
        ms.eps = eps;
        run.map = make_map(ms);
        run.map_norm = check_map(run.map, base.domain->box);
        auto pd = make_perturbation(*base.domain, run.map);
        smooth_lambda(pd, *base.frame);
        decompose_B_C(pd, *base.frame);
        pd.beta = dorronsoro_beta(pd.h, BetaMesh{s.R / 2, s.R / 128, s.R / 2});
        run.sup = sup_norms(pd);
        for (const auto& c : pd.beta.cells)
            beta << eps << ',' << c.y << ',' << c.t << ',' << c.beta << ',' << c.flagged << '\n';
        auto f = dvn_lambda(pd, *base.frame);
        run.carleson["dvn-lambda"] = cmsup_norm(f, *base.domain, ex.boxes);
        run.carleson["C"] = cmsup_norm(C_magnitude(pd), *base.domain, ex.boxes);
        run.carleson["t-grad-B"] = cmsup_norm(t_grad_B(pd, *base.frame), *base.domain, ex.boxes);
        run.pert = std::make_shared<const PerturbationData>(std::move(pd));
        json r = to_json(run);
        r.erase("boundary");
        r.erase("recovered_graph");
        j["runs"].push_back(r);
    }
    write_json(dir / "perturb.json", j);
    return 0;
}

int cmd_build_cov(const Scenario& s) {
    const auto dir = out_dir(s);
    Experiment ex;
    ex.scenario = s;
    run_base(ex, false, false);
    json j = header(s, "build-cov");
    try {
        for (double eps : s.eps_sweep) run_perturbation(ex, eps, false);
    } catch (...) {
        j["runs"] = json::array();
        for (const auto& r : ex.runs) j["runs"].push_back(to_json(r));
        j["status"] = "failed";
        write_json(dir / "build-cov.json", j);
        throw;
    }
    j["runs"] = json::array();
    for (std::size_t i = 0; i < ex.runs.size(); ++i) {
        const auto& r = ex.runs[i];
        j["runs"].push_back(to_json(r));
        write_grid_binary((dir / ("rho_eps" + std::to_string(i) + ".cvlg")).string(), r.cov->rho, s.grid_n);
    }
    j["status"] = "ok";
    write_json(dir / "build-cov.json", j);
    return 0;
}

int cmd_carleson(const Scenario& s, const std::string& field) {
    if (field.empty()) throw InputError("carleson: --field is required");
    const auto dir = out_dir(s);
    Experiment ex;
    ex.scenario = s;
    run_base(ex, false, false);
    if (is_cov_field(field)) {
        if (s.eps_sweep.size() != 1) throw InputError("carleson: field '" + field + "' needs a single --eps");
        run_perturbation(ex, s.eps_sweep[0], false);
    }
    const auto fields = all_fields(*ex.base->frame, ex.runs.empty() ? nullptr : ex.runs[0].cov.get());
    const auto it = fields.find(field);
    if (it == fields.end()) {
        std::string names;
        for (const auto& [k, v] : fields) names += " " + k;
        throw InputError("carleson: unknown field '" + field + "'; available:" + names);
    }
    const auto rep = cmsup_norm(it->second, *ex.base->domain, ex.boxes);
    const auto mean = cm_norm(it->second, *ex.base->domain, ex.boxes);
    write_per_box_csv((dir / ("carleson_" + field + ".csv")).string(), rep);
    json j = header(s, "carleson");
    j["field"] = field;
    j["cmsup"] = to_json(rep);
    j["cm"] = to_json(mean);
    const auto linf = linf_from_cmsup(rep);
    j["linf_over_cmsup"] = {{"sup", linf.sup}, {"ratio", linf.ratio}};
    write_json(dir / ("carleson_" + field + ".json"), j);
    return 0;
}

int cmd_rh(const Scenario& s) {
    const auto dir = out_dir(s);
    Experiment ex;
    ex.scenario = s;
    run_base(ex, true, false);
    json j = header(s, "rh");
    j["rh"] = to_json(*ex.rh_base);
    write_kappa_csv((dir / "kappa.csv").string(), ex.rh_base->kappa);
    for (const auto& r : ex.rh_base->reports) {
        std::ostringstream os;
        os << "balls_p" << r.p << ".csv";
        write_balls_csv((dir / os.str()).string(), r);
    }
    write_json(dir / "rh.json", j);
    return 0;
}

int cmd_pipeline(const Scenario& s) {
    const auto dir = out_dir(s);
    Experiment ex;
    ex.scenario = s;
    auto persist = [&](const std::string& status, const json& failure) {
        json j = to_json(ex);
        j["status"] = status;
        if (!failure.is_null()) j["failure"] = failure;
        write_json(dir / "report.json", j);
        write_experiment_csv(ex, dir);
    };
    try {
        stability_experiment(ex);
    } catch (const InvariantViolation& e) {
        persist("failed", {{"invariant", e.invariant()}, {"message", e.what()}});
        throw;
    } catch (const std::exception& e) {
        persist("failed", {{"message", e.what()}});
        throw;
    }
    persist("ok", nullptr);
    for (const auto& row : comparison_table(ex))
        std::printf("eps=%g p=%g C_p(base)=%.6f C_p(perturbed)=%.6f change=%.2f%%\n", row[0], row[1], row[2], row[3],
                    100 * row[4]);
    return 0;
}

int cmd_report(const Scenario& s) {
    const fs::path path = fs::path(s.output_dir) / s.name / "report.json";
    std::ifstream is(path);
    if (!is) throw InputError("no pipeline report at " + path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw InputError(path.string() + ": " + e.what());
    }
    if (j.value("schema_version", 0) != schema_version) throw InputError(path.string() + ": unsupported schema_version");
    std::ostringstream os;
    os << "scenario " << j["config"]["name"].get<std::string>() << ": " << j.value("status", "unknown") << '\n';
    if (j.contains("failure")) os << "  failure: " << j["failure"]["message"].get<std::string>() << '\n';
    if (j.contains("base")) {
        const auto& b = j["base"];
        os << "  base domain " << b["domain"]["label"].get<std::string>() << ", h = " << b["grid"]["h"] << '\n';
        os << "  C_H = " << b["H1H2"]["C_H"] << ", C_2 = " << b["H1H2"]["C_2"] << '\n';
    }
    for (const auto& [k, v] : j["base_carleson"].items()) os << "  CMsup " << k << " = " << v["norm"] << '\n';
    for (const auto& r : j["runs"]) {
        os << "  eps = " << r["eps"] << '\n';
        if (r.contains("cov"))
            os << "    |J - I| = " << r["cov"]["sup_J_minus_I"] << ", |grad rho - I| = " << r["cov"]["sup_grad_rho_minus_I"]
               << '\n';
        for (const auto& [k, v] : r["carleson"].items()) os << "    CMsup " << k << " = " << v["norm"] << '\n';
    }
    for (const auto& c : j["comparison"])
        os << "  p = " << c["p"] << ": C_p " << c["C_p_base"] << " -> " << c["C_p_perturbed"] << '\n';
    std::cout << os.str();
    std::ofstream(fs::path(s.output_dir) / s.name / "summary.txt") << os.str();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"covlab: change-of-variables laboratory for Lipschitz graph domains"};
    app.require_subcommand(1);
    Flags fl;
    const std::vector<std::pair<std::string, std::string>> cmds{
        {"solve-green", "Green function with pole at infinity and closed-form errors"},
        {"verify-frame", "positivity, H1/H2 and Green-function Carleson diagnostics"},
        {"perturb", "smoothed displacement, B/C partition and beta numbers"},
        {"build-cov", "change of variables rho and operator diagnostics"},
        {"carleson", "Carleson norm of one diagnostic field"},
        {"rh", "kappa density and reverse Hoelder constants"},
        {"pipeline", "full stability experiment over the eps sweep"},
        {"report", "summarize an existing pipeline report"}};
    for (const auto& [name, help] : cmds) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", fl.config, "scenario JSON")->check(CLI::ExistingFile);
        sub->add_option("--domain", fl.domain, "flat | tilted:m | cone[:M] | sine:amp,freq");
        sub->add_option("--phi", fl.phi, "map family");
        sub->add_option("--eps", fl.eps, "comma-separated eps sweep");
        sub->add_option("--grid-n", fl.grid_n, "grid size (power of two >= 64)");
        sub->add_option("--p", fl.p, "comma-separated exponents");
        sub->add_option("--radii", fl.radii, "comma-separated Carleson box radii");
        sub->add_option("--out", fl.out, "output root (default $COVLAB_OUT)");
        sub->add_option("--seed", fl.seed, "seed for inversion targets");
        sub->add_option("--jobs", fl.jobs, "worker threads");
        sub->add_flag("--no-richardson", fl.no_richardson, "skip the refinement/far-field check");
        if (name == "carleson") sub->add_option("--field", fl.field, "diagnostic field name");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }
    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        set_jobs(fl.jobs);
        const Scenario s = resolve(fl);
        if (cmd == "solve-green") return cmd_solve_green(s);
        if (cmd == "verify-frame") return cmd_verify_frame(s);
        if (cmd == "perturb") return cmd_perturb(s);
        if (cmd == "build-cov") return cmd_build_cov(s);
        if (cmd == "carleson") return cmd_carleson(s, fl.field);
        if (cmd == "rh") return cmd_rh(s);
        if (cmd == "pipeline") return cmd_pipeline(s);
        return cmd_report(s);
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return 1;
    } catch (const InvariantViolation& e) {
        std::cerr << "invariant violated: " << e.invariant() << " (" << e.what() << ")\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "failed: " << e.what() << '\n';
        return 2;
    }
}
