#pragma once

#include "covlab/carleson.hpp"
#include "covlab/cov.hpp"
#include "covlab/solvability.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <map>
#include <set>

namespace covlab {

using json = nlohmann::ordered_json;

inline constexpr int schema_version = 1;

// ---------------------------------------------------------------------------
// Scenario

struct BoxFamilySpec {
    int centers = 5;
    std::vector<double> radii;  // empty: R/2, R/4, R/8, R/16
};

struct Scenario {
    std::string name = "scenario";
    GraphSpec domain;
    MapSpec map;
    std::vector<double> eps_sweep{0.05};
    int grid_n = 256;
    double R = 2.0;
    std::vector<double> p_list{1.5, 2.0, 4.0};
    BoxFamilySpec boxes;
    std::string output_dir = "covlab-out";
    std::uint64_t seed = 7;
    bool richardson = true;
    int newton_targets = 100;
};

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw InputError(where + ": expected an object");
    std::string bad;
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) bad += (bad.empty() ? "" : ", ") + k;
    if (!bad.empty()) throw InputError(where + ": unknown key(s): " + bad);
}

template <class T>
T get_as(const json& j, const std::string& key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw InputError(where + "." + key + ": " + e.what());
    }
}

inline Row2 row_from(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        throw InputError(where + ": expected [a, b]");
    return Row2(j[0].get<double>(), j[1].get<double>());
}

}  // namespace detail

inline GraphSpec graph_spec_from_json(const json& j) {
    const std::string where = "domain";
    if (!j.is_object() || !j.contains("family")) throw InputError("domain: 'family' is required");
    GraphSpec s;
    s.family = detail::get_as<std::string>(j, "family", where);
    std::set<std::string> allowed{"family", "lipschitz"};
    if (s.family == "tilted") {
        allowed.insert("slope");
        s.slope = detail::get_as<double>(j, "slope", where);
    } else if (s.family == "cone") {
        allowed.insert("M");
        if (j.contains("M")) s.M = detail::get_as<double>(j, "M", where);
    } else if (s.family == "sine") {
        allowed.insert({"amp", "freq"});
        s.amp = detail::get_as<double>(j, "amp", where);
        s.freq = detail::get_as<double>(j, "freq", where);
    } else if (s.family == "piecewise-linear" || s.family == "custom-table") {
        allowed.insert("knots");
        if (!j.contains("knots") || !j["knots"].is_array()) throw InputError("domain.knots: expected [[x, g], ...]");
        for (const auto& k : j["knots"]) s.knots.push_back(detail::row_from(k, "domain.knots"));
    } else if (s.family != "flat") {
        throw InputError("domain: unknown family '" + s.family + "'");
    }
    detail::reject_unknown(j, allowed, where);
    if (j.contains("lipschitz")) s.declared_lipschitz = detail::get_as<double>(j, "lipschitz", where);
    return s;
}

inline json graph_spec_to_json(const GraphSpec& s) {
    json j;
    j["family"] = s.family;
    if (s.family == "tilted") j["slope"] = s.slope;
    if (s.family == "cone") j["M"] = s.M;
    if (s.family == "sine") {
        j["amp"] = s.amp;
        j["freq"] = s.freq;
    }
    if (!s.knots.empty()) {
        j["knots"] = json::array();
        for (const auto& k : s.knots) j["knots"].push_back({k(0), k(1)});
    }
    if (s.declared_lipschitz) j["lipschitz"] = *s.declared_lipschitz;
    return j;
}

inline MapSpec map_spec_from_json(const json& j) {
    const std::string where = "map";
    if (!j.is_object() || !j.contains("family")) throw InputError("map: 'family' is required");
    MapSpec s;
    s.family = detail::get_as<std::string>(j, "family", where);
    std::set<std::string> allowed{"family"};
    if (s.family == "translation") {
        allowed.insert("shift");
        s.shift = detail::row_from(j.value("shift", json::array({0.0, 0.0})), "map.shift");
    } else if (s.family == "linear") {
        allowed.insert("E");
        if (!j.contains("E")) throw InputError("map.E is required for the linear family");
        const json& E = j["E"];
        if (!E.is_array() || E.size() != 2) throw InputError("map.E: expected [[a, b], [c, d]]");
        s.E.row(0) = detail::row_from(E[0], "map.E");
        s.E.row(1) = detail::row_from(E[1], "map.E");
    } else if (s.family == "rotation") {
        allowed.insert("angle");
        s.angle = detail::get_as<double>(j, "angle", where);
    } else if (s.family != "identity" && s.family != "shear" && s.family != "wave" && s.family != "vertical-wave") {
        throw InputError("map: unknown family '" + s.family + "'");
    }
    detail::reject_unknown(j, allowed, where);
    return s;
}

inline json map_spec_to_json(const MapSpec& s) {
    json j;
    j["family"] = s.family;
    if (s.family == "translation") j["shift"] = {s.shift(0), s.shift(1)};
    if (s.family == "linear") j["E"] = {{s.E(0, 0), s.E(0, 1)}, {s.E(1, 0), s.E(1, 1)}};
    if (s.family == "rotation") j["angle"] = s.angle;
    return j;
}

inline void validate(const Scenario& s) {
    if (s.name.empty() || s.name.find('/') != std::string::npos || s.name == "." || s.name == "..")
        throw InputError("name must be a non-empty path component");
    if (s.eps_sweep.empty()) throw InputError("eps_sweep must not be empty");
    for (std::size_t i = 1; i < s.eps_sweep.size(); ++i)
        if (!(s.eps_sweep[i] > s.eps_sweep[i - 1])) throw InputError("eps_sweep must be strictly increasing");
    for (double e : s.eps_sweep)
        if (!(e >= 0)) throw InputError("eps_sweep entries must be nonnegative");
    if (s.grid_n < 64 || (s.grid_n & (s.grid_n - 1)) != 0) throw InputError("grid_n must be a power of two >= 64");
    if (!(s.R > 0)) throw InputError("R must be positive");
    if (s.p_list.empty()) throw InputError("p_list must not be empty");
    for (double p : s.p_list)
        if (!(p > 1)) throw InputError("p_list entries must exceed 1");
    if (s.boxes.centers < 1) throw InputError("boxes.centers must be at least 1");
    for (double r : s.boxes.radii)
        if (!(r > 0)) throw InputError("boxes.radii entries must be positive");
    if (s.newton_targets < 0) throw InputError("newton_targets must be nonnegative");
}

inline Scenario scenario_from_json(const json& j) {
    detail::reject_unknown(j, {"name", "domain", "map", "eps_sweep", "grid_n", "R", "p_list", "boxes", "output_dir",
                               "seed", "richardson", "newton_targets"},
                           "config");
    Scenario s;
    const std::string w = "config";
    if (j.contains("name")) s.name = detail::get_as<std::string>(j, "name", w);
    if (j.contains("domain")) s.domain = graph_spec_from_json(j["domain"]);
    if (j.contains("map")) s.map = map_spec_from_json(j["map"]);
    if (j.contains("eps_sweep")) s.eps_sweep = detail::get_as<std::vector<double>>(j, "eps_sweep", w);
    if (j.contains("grid_n")) s.grid_n = detail::get_as<int>(j, "grid_n", w);
    if (j.contains("R")) s.R = detail::get_as<double>(j, "R", w);
    if (j.contains("p_list")) s.p_list = detail::get_as<std::vector<double>>(j, "p_list", w);
    if (j.contains("boxes")) {
        const json& b = j["boxes"];
        detail::reject_unknown(b, {"centers", "radii"}, "boxes");
        if (b.contains("centers")) s.boxes.centers = detail::get_as<int>(b, "centers", "boxes");
        if (b.contains("radii")) s.boxes.radii = detail::get_as<std::vector<double>>(b, "radii", "boxes");
    }
    if (j.contains("output_dir")) s.output_dir = detail::get_as<std::string>(j, "output_dir", w);
    if (j.contains("seed")) s.seed = detail::get_as<std::uint64_t>(j, "seed", w);
    if (j.contains("richardson")) s.richardson = detail::get_as<bool>(j, "richardson", w);
    if (j.contains("newton_targets")) s.newton_targets = detail::get_as<int>(j, "newton_targets", w);
    validate(s);
    return s;
}

inline json scenario_to_json(const Scenario& s) {
    json j;
    j["name"] = s.name;
    j["domain"] = graph_spec_to_json(s.domain);
    j["map"] = map_spec_to_json(s.map);
    j["eps_sweep"] = s.eps_sweep;
    j["grid_n"] = s.grid_n;
    j["R"] = s.R;
    j["p_list"] = s.p_list;
    j["boxes"] = {{"centers", s.boxes.centers}, {"radii", s.boxes.radii}};
    j["output_dir"] = s.output_dir;
    j["seed"] = s.seed;
    j["richardson"] = s.richardson;
    j["newton_targets"] = s.newton_targets;
    return j;
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot read config " + path);
    json j;
    try {
        j = json::parse(is, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw InputError(path + ": " + e.what());
    }
    return scenario_from_json(j);
}

inline std::vector<CarlesonBox> box_family(const Scenario& s, const GraphDomain& d) {
    if (s.boxes.radii.empty()) return default_box_family(d, s.boxes.centers, 4);
    std::vector<CarlesonBox> out;
    const double half = d.R / 2;
    for (int a = 0; a < s.boxes.centers; ++a) {
        const double x0 = s.boxes.centers == 1 ? 0.0 : -half + 2 * half * a / (s.boxes.centers - 1);
        for (double r : s.boxes.radii)
            if (std::abs(x0) + r <= 0.75 * d.R * (1 + 1e-12)) out.push_back({x0, r});
    }
    if (out.empty()) throw InputError("boxes: every box reaches past |x| = 3R/4");
    return out;
}

// ---------------------------------------------------------------------------
// Stages

struct GreenStage {
    std::shared_ptr<const GraphDomain> domain;
    std::shared_ptr<const FrameField> frame;
    H1H2Report h1h2;
    GradientBoundReport gradient;

    const GreenData& green() const { return *frame->green; }
};

inline GreenStage green_stage(std::shared_ptr<const GraphDomain> dom, int grid_n, bool richardson) {
    GreenStage st;
    st.domain = dom;
    GreenOptions o;
    o.richardson = richardson;
    auto gd = solve_green(std::move(dom), grid_n, o);
    derivatives(gd);
    st.h1h2 = check_H1_H2(gd);
    st.gradient = check_gradient_bound(gd);
    auto ff = build_frame(std::make_shared<const GreenData>(std::move(gd)));
    transversal_fields(ff);
    st.frame = std::make_shared<const FrameField>(std::move(ff));
    return st;
}

struct RHStage {
    std::vector<KappaSample> kappa;
    std::vector<RHReport> reports;
    ComparabilityReport comparability;
};

inline RHStage rh_stage(const GreenData& gd, const std::vector<double>& p_list) {
    RHStage st;
    st.kappa = kappa_density(gd);
    const auto balls = default_ball_family(*gd.domain);
    for (double p : p_list) st.reports.push_back(rh_constant(st.kappa, p, *gd.domain, balls));
    check_rh_monotone(st.reports);
    st.comparability = green_measure_comparability(gd, st.kappa);
    return st;
}

using NamedFields = std::vector<std::pair<std::string, Field<double>>>;

/// Carleson candidates that depend on the Green function of the base domain only.
inline NamedFields green_fields(const FrameField& ff) {
    return {{"hessian-ratio", hessian_ratio(*ff.green)},
            {"delta-grad-v1", delta_grad_v(ff, 0)},
            {"delta-grad-v2", delta_grad_v(ff, 1)},
            {"grad-t-defect", grad_t_defect(ff)},
            {"grad-y-defect", grad_y_defect(ff)}};
}

/// Carleson candidates of the change of variables.
inline NamedFields cov_fields(const CovField& cf) {
    const FrameField& ff = *cf.frame;
    const PerturbationData& pd = *cf.pert;
    return {{"dvn-lambda", dvn_lambda(pd, ff)},
            {"C", C_magnitude(pd)},
            {"t-grad-B", t_grad_B(pd, ff)},
            {"t-grad-O", t_grad(cf.O, ff)},
            {"t-grad-J0", t_grad(cf.J0, ff)},
            {"J1", matrix_magnitude(cf.J1)},
            {"A-rho-minus-A0", operator_difference(cf)}};
}

struct SupNorms {
    double grad_lambda = 0, B = 0;  // entrywise max over admissible nodes
};

inline SupNorms sup_norms(const PerturbationData& pd) {
    SupNorms s;
    for (std::size_t k = 0; k < pd.grad_lambda.grid.size(); ++k) {
        if (!pd.grad_lambda.ok(k)) continue;
        s.grad_lambda = std::max(s.grad_lambda, max_abs(pd.grad_lambda.values[k]));
        s.B = std::max(s.B, max_abs(pd.B.values[k]));
    }
    return s;
}

/// Exact algebraic identities of the frame and operator construction.
inline void check_frame_algebra(const FrameField& ff, const CovDiagnostics& d) {
    auto need = [](double v, double tol, const char* what) {
        if (!(v <= tol)) {
            std::ostringstream os;
            os << v << " > " << tol;
            throw InvariantViolation(what, os.str());
        }
    };
    need(ff.frame_orthonormality, 1e-12, "orthonormality of V");
    need(d.w_orthonormality, 1e-12, "orthonormality of W");
    need(d.upper_triangularity, 1e-12, "Gram-Schmidt triangularity");
    need(d.detJ0_minus_a2, 1e-10, "det J0 = a^2");
    need(d.A0_vn_residual, 1e-10, "A0 vn = vn");
}

struct PerturbedRun {
    double eps = 0;
    BiLipMap map;
    MapNormReport map_norm;
    std::shared_ptr<const PerturbationData> pert;
    std::shared_ptr<const CovField> cov;
    SupNorms sup;
    BoundaryCheck boundary;
    std::map<std::string, CarlesonReport> carleson;
    RecoveredGraphInfo recovered;
    std::optional<GreenStage> perturbed;
    std::optional<RHStage> rh;
    std::map<std::string, double> seconds;
};

struct Experiment {
    Scenario scenario;
    std::vector<CarlesonBox> boxes;
    std::optional<GreenStage> base;
    std::optional<RHStage> rh_base;
    std::map<std::string, CarlesonReport> base_carleson;
    std::vector<PerturbedRun> runs;
    std::map<std::string, double> seconds;
};

namespace detail {

template <class F>
auto timed(std::map<std::string, double>& log, const std::string& key, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(f())>) {
        f();
        log[key] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } else {
        auto r = f();
        log[key] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return r;
    }
}

}  // namespace detail

inline void run_base(Experiment& ex, bool with_rh = true, bool with_carleson = true) {
    const Scenario& s = ex.scenario;
    auto dom = std::make_shared<const GraphDomain>(build_domain(s.domain, 2, s.R, s.grid_n));
    ex.boxes = box_family(s, *dom);
    ex.base = detail::timed(ex.seconds, "green", [&] { return green_stage(dom, s.grid_n, s.richardson); });
    if (with_carleson)
        detail::timed(ex.seconds, "carleson", [&] {
            for (auto& [name, f] : green_fields(*ex.base->frame)) ex.base_carleson[name] = cmsup_norm(f, *dom, ex.boxes);
        });
    if (with_rh) ex.rh_base = detail::timed(ex.seconds, "rh", [&] { return rh_stage(ex.base->green(), s.p_list); });
}

/// Perturbation, change of variables and diagnostics on the base domain; optionally the Green
/// function and RH constants of the perturbed domain.
inline void run_perturbation(Experiment& ex, double eps, bool solve_perturbed = true) {
    const Scenario& s = ex.scenario;
    const GreenStage& base = *ex.base;
    const GraphDomain& dom = *base.domain;
    ex.runs.emplace_back();
    PerturbedRun& run = ex.runs.back();
    run.eps = eps;
    MapSpec ms = s.map;
    ms.eps = eps;
    run.map = make_map(ms);
    run.map_norm = check_map(run.map, dom.box);
    require(run.map_norm.within_bound, "map norm", "|grad Phi - I| exceeds the declared bound");
    auto& sec = run.seconds;
    detail::timed(sec, "perturb", [&] {
        auto pd = make_perturbation(dom, run.map);
        smooth_lambda(pd, *base.frame);
        decompose_B_C(pd, *base.frame);
        pd.beta = dorronsoro_beta(pd.h, BetaMesh{s.R / 2, s.R / 128, s.R / 2});
        run.sup = sup_norms(pd);
        run.pert = std::make_shared<const PerturbationData>(std::move(pd));
    });
    detail::timed(sec, "cov", [&] {
        run.cov = std::make_shared<const CovField>(build_cov(base.frame, run.pert));
    });
    check_frame_algebra(*base.frame, run.cov->diag);
    detail::timed(sec, "carleson", [&] {
        for (auto& [name, f] : cov_fields(*run.cov)) run.carleson[name] = cmsup_norm(f, dom, ex.boxes);
    });
    const auto domP = std::make_shared<const GraphDomain>(recover_graph(dom, run.map, &run.recovered));
    detail::timed(sec, "bijection", [&] {
        run.boundary = check_boundary_and_bijection(*run.cov, dom, *domP, s.newton_targets, s.seed);
    });
    if (!solve_perturbed) return;
    run.perturbed = detail::timed(sec, "green_perturbed", [&] { return green_stage(domP, s.grid_n, s.richardson); });
    run.rh = detail::timed(sec, "rh_perturbed", [&] { return rh_stage(run.perturbed->green(), s.p_list); });
}

/// Full stability experiment over the eps sweep. On failure the experiment keeps everything
/// computed before the throw.
inline void stability_experiment(Experiment& ex) {
    validate(ex.scenario);
    run_base(ex);
    for (double eps : ex.scenario.eps_sweep) run_perturbation(ex, eps);
}

// ---------------------------------------------------------------------------
// Reports

inline json to_json(const CarlesonReport& r) {
    return {{"norm_estimate", r.norm_estimate},
            {"norm", r.norm()},
            {"maximizer", {{"x0", r.maximizer.x0}, {"r", r.maximizer.r}}},
            {"cutoff_collar", r.cutoff_collar},
            {"modeled_collar_fraction", r.modeled_collar_fraction},
            {"unreliable", r.unreliable},
            {"skipped_boxes", r.skipped_boxes},
            {"skipped_whitney", r.skipped_whitney},
            {"sup_sampled", r.sup_sampled},
            {"boxes", r.per_box.size()}};
}

inline json to_json(const RHReport& r) {
    return {{"p", r.p},
            {"C_p", r.C_p},
            {"balls", r.per_ball.size()},
            {"skipped_balls", r.skipped_balls},
            {"flagged_samples", r.flagged},
            {"samples", r.kappa.size()},
            {"max_residual", r.max_residual}};
}

inline json to_json(const GreenStage& st) {
    const GreenData& gd = st.green();
    json j;
    j["domain"] = {{"label", st.domain->graph.label},
                   {"lipschitz_M", st.domain->lipschitz_M()},
                   {"R", st.domain->R},
                   {"boundary_samples", st.domain->boundary_samples.size()}};
    j["grid"] = {{"h", gd.h}, {"grid_n", gd.grid_n}, {"cols", gd.grid.cols()}, {"rows", gd.grid.rows()}};
    j["farfield_model"] = gd.farfield_model;
    j["solve_residual"] = gd.solve_residual;
    j["harmonic_residual"] = gd.harmonic_residual;
    j["richardson"] = {{"performed", gd.richardson.performed},
                       {"fine_discrepancy", gd.richardson.fine_discrepancy},
                       {"wide_discrepancy", gd.richardson.wide_discrepancy},
                       {"warning", gd.richardson.warning}};
    j["H1H2"] = {{"C_H", st.h1h2.C_H},
                 {"C_2", st.h1h2.C_2},
                 {"c_dn", st.h1h2.c_dn},
                 {"min_vn_en", st.h1h2.min_vn_en},
                 {"vn_en_bound", st.h1h2.vn_en_bound},
                 {"nodes", st.h1h2.nodes},
                 {"positive_dn", st.h1h2.positive_dn}};
    j["gradient_bound"] = {{"sup_ratio", st.gradient.sup_ratio}, {"admissible", st.gradient.admissible}};
    const FrameField& ff = *st.frame;
    j["frame"] = {{"orthonormality", ff.frame_orthonormality},
                  {"min_tilde_norm", ff.min_tilde_norm},
                  {"t_over_delta", {ff.t_over_delta_min, ff.t_over_delta_max}},
                  {"grad_v_ratio", ff.grad_v_ratio},
                  {"grad_t_route_residual", ff.grad_t_route_residual}};
    return j;
}

inline json to_json(const RHStage& st) {
    json j;
    j["kappa_samples"] = st.kappa.size();
    j["reports"] = json::array();
    for (const auto& r : st.reports) j["reports"].push_back(to_json(r));
    j["comparability"] = {{"C", st.comparability.C},
                          {"min_ratio", st.comparability.min_ratio},
                          {"max_ratio", st.comparability.max_ratio},
                          {"points", st.comparability.points}};
    return j;
}

inline json to_json(const CovDiagnostics& d) {
    return {{"w_orthonormality", d.w_orthonormality},
            {"O_orthogonality", d.O_orthogonality},
            {"W_vs_VO", d.W_vs_VO},
            {"upper_triangularity", d.upper_triangularity},
            {"detJ0_minus_a2", d.detJ0_minus_a2},
            {"min_w_tilde", d.min_w_tilde},
            {"closeness_wv", d.closeness_wv},
            {"sup_J_minus_I", d.sup_J_minus_I},
            {"sup_J0_minus_I", d.sup_J0_minus_I},
            {"sup_A0_minus_I", d.sup_A0_minus_I},
            {"sup_O_minus_I", d.sup_O_minus_I},
            {"sup_grad_rho_minus_I", d.sup_grad_rho_minus_I},
            {"jacobian_identity_residual", d.jacobian_identity_residual},
            {"A0_vn_residual", d.A0_vn_residual},
            {"A0_symmetry", d.A0_symmetry},
            {"A0_eigenvalues", {d.A0_eig_min, d.A0_eig_max}},
            {"ellipticity_checked", d.ellipticity_checked},
            {"det_grad_rho_min", d.det_grad_rho_min},
            {"divergence", {{"A0_gradG", d.div_A0_gradG}, {"gradG", d.div_gradG}, {"agreement", d.div_agreement}}},
            {"nodes", d.nodes},
            {"excluded_step", d.excluded_step},
            {"excluded_singular", d.excluded_singular}};
}

inline json to_json(const PerturbedRun& r) {
    json j;
    j["eps"] = r.eps;
    j["map"] = {{"label", r.map.label},
                {"eps_bound", r.map.eps_bound},
                {"max_entrywise", r.map_norm.max_entrywise},
                {"max_operator", r.map_norm.max_operator}};
    if (r.pert) {
        const auto& pd = *r.pert;
        j["perturbation"] = {{"lip_h", pd.h.lip_h},
                             {"sup_grad_lambda", r.sup.grad_lambda},
                             {"sup_B", r.sup.B},
                             {"kernel_residual", pd.kernel_residual},
                             {"lambda_fd_residual", pd.lambda_fd_residual},
                             {"partition_residual", pd.partition_residual},
                             {"mean_subtraction_residual", pd.mean_subtraction_residual},
                             {"vnB_residual", pd.vnB_residual},
                             {"anchor_constant", pd.anchor_constant}};
        j["beta"] = {{"cells", pd.beta.cells.size()},
                     {"flagged", pd.beta.flagged},
                     {"carleson_norm", pd.beta.carleson_norm},
                     {"ratio_to_lip2", pd.beta.ratio_to_lip2},
                     {"maximizer", {pd.beta.maximizer(0), pd.beta.maximizer(1)}},
                     {"max_inclusion_ratio", pd.beta.max_inclusion_ratio},
                     {"inclusion_pairs", pd.beta.inclusion_pairs}};
    }
    if (r.cov) j["cov"] = to_json(r.cov->diag);
    j["carleson"] = json::object();
    for (const auto& [k, v] : r.carleson) j["carleson"][k] = to_json(v);
    j["boundary"] = {{"C_boundary", r.boundary.C_boundary},
                     {"max_distance", r.boundary.max_distance},
                     {"samples", r.boundary.samples},
                     {"newton_targets", r.boundary.newton_targets},
                     {"newton_success", r.boundary.newton_success},
                     {"max_roundtrip", r.boundary.max_roundtrip},
                     {"sup_grad_rho_minus_I", r.boundary.sup_grad_rho_minus_I},
                     {"grad_rho_within_half", r.boundary.grad_rho_within_half}};
    j["recovered_graph"] = {{"lipschitz_bound", r.recovered.lipschitz_bound},
                            {"max_residual", r.recovered.max_residual}};
    if (r.perturbed) j["perturbed_green"] = to_json(*r.perturbed);
    if (r.rh) j["perturbed_rh"] = to_json(*r.rh);
    j["seconds"] = r.seconds;
    return j;
}

/// Rows (eps, p, C_p base, C_p perturbed, relative change).
inline std::vector<std::array<double, 5>> comparison_table(const Experiment& ex) {
    std::vector<std::array<double, 5>> rows;
    if (!ex.rh_base) return rows;
    for (const auto& run : ex.runs) {
        if (!run.rh) continue;
        for (std::size_t i = 0; i < run.rh->reports.size(); ++i) {
            const double a = ex.rh_base->reports[i].C_p, b = run.rh->reports[i].C_p;
            rows.push_back({run.eps, run.rh->reports[i].p, a, b, std::abs(b - a) / a});
        }
    }
    return rows;
}

inline json to_json(const Experiment& ex) {
    json j;
    j["schema_version"] = schema_version;
    j["config"] = scenario_to_json(ex.scenario);
    if (ex.base) j["base"] = to_json(*ex.base);
    j["base_carleson"] = json::object();
    for (const auto& [k, v] : ex.base_carleson) j["base_carleson"][k] = to_json(v);
    if (ex.rh_base) j["base_rh"] = to_json(*ex.rh_base);
    j["runs"] = json::array();
    for (const auto& r : ex.runs) j["runs"].push_back(to_json(r));
    j["comparison"] = json::array();
    for (const auto& row : comparison_table(ex))
        j["comparison"].push_back(
            {{"eps", row[0]}, {"p", row[1]}, {"C_p_base", row[2]}, {"C_p_perturbed", row[3]}, {"relative_change", row[4]}});
    j["seconds"] = ex.seconds;
    return j;
}

/// CSV artifacts of an experiment; file names are listed in the README.
inline void write_experiment_csv(const Experiment& ex, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    if (ex.base) write_grid_binary((dir / "G.cvlg").string(), ex.base->green().G, ex.scenario.grid_n);
    for (const auto& [k, v] : ex.base_carleson) write_per_box_csv((dir / ("carleson_base_" + k + ".csv")).string(), v);
    if (ex.rh_base) {
        write_kappa_csv((dir / "kappa_base.csv").string(), ex.rh_base->kappa);
        for (const auto& r : ex.rh_base->reports) {
            std::ostringstream os;
            os << "balls_base_p" << r.p << ".csv";
            write_balls_csv((dir / os.str()).string(), r);
        }
    }
    for (std::size_t i = 0; i < ex.runs.size(); ++i) {
        const auto& run = ex.runs[i];
        const std::string tag = "eps" + std::to_string(i);
        for (const auto& [k, v] : run.carleson)
            write_per_box_csv((dir / ("carleson_" + tag + "_" + k + ".csv")).string(), v);
        if (run.rh) {
            write_kappa_csv((dir / ("kappa_" + tag + ".csv")).string(), run.rh->kappa);
            for (const auto& r : run.rh->reports) {
                std::ostringstream os;
                os << "balls_" << tag << "_p" << r.p << ".csv";
                write_balls_csv((dir / os.str()).string(), r);
            }
        }
    }
    std::ofstream cmp(dir / "comparison.csv");
    cmp.precision(17);
    cmp << "eps,p,C_p_base,C_p_perturbed,relative_change\n";
    for (const auto& r : comparison_table(ex)) cmp << r[0] << ',' << r[1] << ',' << r[2] << ',' << r[3] << ',' << r[4] << '\n';
    std::ofstream sc(dir / "eps_scaling.csv");
    sc.precision(17);
    sc << "eps,quantity,value\n";
    for (const auto& run : ex.runs) {
        sc << run.eps << ",sup_grad_lambda," << run.sup.grad_lambda << '\n';
        sc << run.eps << ",sup_B," << run.sup.B << '\n';
        if (run.cov) {
            const auto& d = run.cov->diag;
            sc << run.eps << ",sup_J_minus_I," << d.sup_J_minus_I << '\n';
            sc << run.eps << ",sup_J0_minus_I," << d.sup_J0_minus_I << '\n';
            sc << run.eps << ",sup_A0_minus_I," << d.sup_A0_minus_I << '\n';
            sc << run.eps << ",sup_O_minus_I," << d.sup_O_minus_I << '\n';
        }
        for (const auto& [k, v] : run.carleson) sc << run.eps << ",cmsup_" << k << ',' << v.norm() << '\n';
    }
}

}  // namespace covlab
