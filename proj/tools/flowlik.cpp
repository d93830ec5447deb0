// flowlik command-line front end.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flowlik.hpp"

using namespace flowlik;

namespace {

struct Globals {
    std::uint64_t seed = 1;
    unsigned threads = 1;
    std::string out;
};

// Output goes to --out, or stdout when it is empty or "-".
class Output {
  public:
    explicit Output(const std::string& path) {
        if (!path.empty() && path != "-") {
            file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
            if (!*file_) throw ConfigError("cannot write " + path);
        }
    }
    std::ostream& stream() { return file_ ? *file_ : std::cout; }

  private:
    std::unique_ptr<std::ofstream> file_;
};

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, sep)) out.push_back(tok);
    return out;
}

double to_double(const std::string& t) {
    try {
        std::size_t used = 0;
        double v = std::stod(t, &used);
        if (used == t.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("bad number '" + t + "'");
}

long to_long(const std::string& t) {
    try {
        std::size_t used = 0;
        long v = std::stol(t, &used);
        if (used == t.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("bad integer '" + t + "'");
}

Json json_arg(const std::string& arg) {
    if (!arg.empty() && (arg.front() == '{' || arg.front() == '[')) {
        try {
            return Json::parse(arg);
        } catch (const Json::parse_error& e) {
            throw ConfigError(std::string("bad inline JSON: ") + e.what());
        }
    }
    return load_json(arg);
}

// "gamma:0.6,526.32", inline JSON, or a JSON file.
PacketModel parse_model(const std::string& arg) {
    auto colon = arg.find(':');
    if (colon != std::string::npos && arg.front() != '{') {
        Json j;
        j["family"] = arg.substr(0, colon);
        std::vector<double> p;
        for (const auto& t : split(arg.substr(colon + 1), ',')) p.push_back(to_double(t));
        j["params"] = p;
        return model_from_json(j);
    }
    return model_from_json(json_arg(arg));
}

// "zeta:2.012085", "zipf:1:11,101,1001", "point:2", inline JSON, or a JSON file.
FlowSizePmf parse_pmf(const std::string& arg) {
    if (arg.rfind("zeta:", 0) == 0) return FlowSizePmf::zeta(to_double(arg.substr(5)));
    if (arg.rfind("point:", 0) == 0) return FlowSizePmf::point(to_long(arg.substr(6)));
    if (arg.rfind("zipf:", 0) == 0) {
        auto parts = split(arg, ':');
        if (parts.size() != 3) throw ConfigError("zipf pmf: expected zipf:<shape>:<s1,s2,...>");
        std::vector<long> sup;
        for (const auto& t : split(parts[2], ',')) sup.push_back(to_long(t));
        return FlowSizePmf::zipf(to_double(parts[1]), sup);
    }
    return pmf_from_json(json_arg(arg));
}

Family family_of(const std::string& arg) {
    if (arg.find(':') != std::string::npos || arg.front() == '{' || arg.find(".json") != std::string::npos)
        return parse_model(arg).family;
    return family_from_string(arg);
}

std::string first_line(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    std::string line;
    std::getline(in, line);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

bool is_trace(const std::string& path) { return first_line(path) == "flow_id,timestamp_ns"; }

std::vector<NetFlow> netflows_of(const std::string& path) {
    if (!is_trace(path)) return read_netflow_csv(path);
    IngestConfig ic;
    ic.min_flow_size = 1;
    return aggregate_all(read_trace(path, ic).all_flows);
}

std::vector<SampledNetFlow> sampled_of(const std::string& path) {
    if (!is_trace(path)) return read_sampled_netflow_csv(path);
    IngestConfig ic;
    ic.min_flow_size = 1;
    auto data = read_trace(path, ic);
    std::vector<SampledNetFlow> out;
    for (const auto& f : data.all_flows)
        if (auto s = aggregate_sampled(f)) out.push_back(*s);
    return out;
}

void write_json(const Globals& g, const Json& j) {
    Output o(g.out);
    o.stream() << j.dump(2) << '\n';
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"flowlik: NetFlow likelihood toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--seed", g.seed, "random seed")->capture_default_str();
    app.add_option("--threads", g.threads, "worker threads (0 = all cores)")->capture_default_str();
    app.add_option("--out", g.out, "output file (default stdout)");

    // simulate
    auto* sim = app.add_subcommand("simulate", "simulate a session and write its packet trace");
    std::string sim_config, sim_model = "gamma:0.6,526.32", sim_pmf = "zeta:2.012085", sim_netflow_out;
    long sim_n = 0;
    double sim_rate = 1.0, sim_q = 1.0;
    sim->add_option("--config", sim_config, "session JSON (flags below override it)");
    auto* sim_n_opt = sim->add_option("--n", sim_n, "number of flows")->check(CLI::PositiveNumber);
    sim->add_option("--model", sim_model, "packet model")->capture_default_str();
    sim->add_option("--pmf", sim_pmf, "flow size pmf")->capture_default_str();
    sim->add_option("--flow-rate", sim_rate, "flow arrival rate")->capture_default_str();
    sim->add_option("--q", sim_q, "packet retention probability")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    sim->add_option("--netflow-out", sim_netflow_out, "also write (sampled) NetFlows here");

    // thin
    auto* thin = app.add_subcommand("thin", "Bernoulli-thin the packets of a trace");
    std::string thin_in;
    double thin_q = 1.0;
    bool thin_slow = false;
    thin->add_option("input", thin_in, "trace CSV")->required();
    thin->add_option("--q", thin_q, "retention probability")->required()->check(CLI::Range(0.0, 1.0));
    thin->add_flag("--per-packet", thin_slow, "draw one Bernoulli per packet instead of binomial + subset");

    // aggregate
    auto* agg = app.add_subcommand("aggregate", "aggregate a trace into NetFlow records");
    std::string agg_in;
    long agg_min = 1;
    agg->add_option("input", agg_in, "trace CSV")->required();
    agg->add_option("--min-size", agg_min, "drop flows with fewer packets")->capture_default_str();

    // fit
    auto* fit = app.add_subcommand("fit", "fit a packet model");
    std::string fit_in, fit_est = "mle", fit_model = "gamma", fit_pmf;
    double fit_q = 1.0, fit_rate = 1.0, fit_trunc = 1e-10;
    fit->add_option("input", fit_in, "NetFlow CSV or trace CSV")->required();
    fit->add_option("--estimator", fit_est, "estimator")
        ->check(CLI::IsMember({"mle", "mle-sampled", "mle-standard", "mom", "mom-netflow", "lognormal-two-step"}))
        ->capture_default_str();
    fit->add_option("--model", fit_model, "model family (or a full model string)")->capture_default_str();
    fit->add_option("--pmf", fit_pmf, "flow size pmf");
    fit->add_option("--q", fit_q, "packet retention probability")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    fit->add_option("--flow-rate", fit_rate, "flow arrival rate")->capture_default_str();
    fit->add_option("--truncation", fit_trunc, "mixture truncation mass")->capture_default_str();
    std::string fit_trace_lik;
    fit->add_option("--trace-lik", fit_trace_lik, "write per-flow log-likelihood terms at the estimate to this CSV");

    // bound
    auto* bound = app.add_subcommand("bound", "minimum number of NetFlows for a target efficiency");
    EfficiencyRequest req;
    std::string bound_model = "gamma:0.6,526.32", bound_pmf = "zipf:1:11,101,1001";
    double bound_q = 1.0;
    bound->add_option("--epsilon", req.epsilon, "relative efficiency slack")->capture_default_str();
    bound->add_option("--eta", req.eta, "failure probability")->capture_default_str();
    bound->add_option("--q", bound_q, "retention probability")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    bound->add_option("--pmf", bound_pmf, "bounded flow size pmf")->capture_default_str();
    bound->add_option("--model", bound_model, "packet model")->capture_default_str();
    bound->add_option("--mc-samples", req.mc_samples, "Monte-Carlo draws")->capture_default_str();
    bound->add_option("--k-flows", req.k_flows, "flows behind the standard MLE")->capture_default_str();
    bound->add_option("--dim", req.dim, "parameter dimension (0 = model)")->capture_default_str();
    bound->add_option("--fd-step", req.fd_step, "relative finite-difference step")->capture_default_str();

    // survival
    auto* surv = app.add_subcommand("survival", "empirical survival curve of inter-renewals");
    std::string surv_in, surv_model;
    int surv_points = 200;
    surv->add_option("input", surv_in, "trace CSV, or one positive value per line")->required();
    surv->add_option("--points", surv_points, "grid points")->check(CLI::Range(2, 1000000))->capture_default_str();
    surv->add_option("--model", surv_model, "model to overlay");

    // study
    auto* study = app.add_subcommand("study", "replicate study over session sizes");
    std::string study_config;
    long study_reps = 0;
    std::vector<long> study_grid;
    bool omit_timing = false;
    study->add_option("--config", study_config, "study JSON")->required();
    study->add_option("--replicates", study_reps, "override replicate count")->check(CLI::PositiveNumber);
    study->add_option("--n-grid", study_grid, "override session sizes")->delimiter(',');
    study->add_flag("--omit-timing", omit_timing, "write time_ms as nan so reruns are byte-identical");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    g.threads = resolve_threads(g.threads);
    std::cerr << "seed=" << g.seed << '\n';

    try {
        if (*sim) {
            SessionConfig cfg;
            if (!sim_config.empty()) cfg = session_from_json(load_json(sim_config));
            if (sim->count("--model") || sim_config.empty()) cfg.packet_model = parse_model(sim_model);
            if (sim->count("--pmf") || sim_config.empty()) cfg.flow_size_pmf = parse_pmf(sim_pmf);
            if (sim->count("--flow-rate") || sim_config.empty()) cfg.flow_rate = sim_rate;
            if (sim->count("--q") || sim_config.empty()) cfg.thinning_q = sim_q;
            if (sim_n_opt->count()) cfg.n_flows = sim_n;
            else if (sim_config.empty()) throw CLI::RequiredError("--n");
            if (app.count("--seed") || sim_config.empty()) cfg.seed = g.seed;
            cfg.validate();
            auto flows = generate_session(cfg, g.threads);
            if (cfg.thinning_q < 1.0) flows = thin_session(flows, cfg.thinning_q, cfg.seed, true, g.threads);
            Output o(g.out);
            write_trace(o.stream(), flows);
            if (!sim_netflow_out.empty()) {
                Output nf(sim_netflow_out);
                if (cfg.thinning_q < 1.0) {
                    write_netflow_csv(nf.stream(), aggregate_sampled_all(flows));
                } else {
                    write_netflow_csv(nf.stream(), aggregate_all(flows));
                }
            }
        } else if (*thin) {
            IngestConfig ic;
            ic.min_flow_size = 1;
            auto data = read_trace(thin_in, ic);
            auto out = thin_session(data.all_flows, thin_q, g.seed, !thin_slow, g.threads);
            Output o(g.out);
            write_trace(o.stream(), out);
        } else if (*agg) {
            IngestConfig ic;
            ic.min_flow_size = std::max(1L, agg_min);
            auto data = read_trace(agg_in, ic);
            Output o(g.out);
            write_netflow_csv(o.stream(), aggregate_all(data.flows));
            std::cerr << "flows=" << data.all_flows.size() << " kept=" << data.flows.size()
                      << " trivial=" << data.trivial << " clamped_gaps=" << data.clamped_gaps << '\n';
        } else if (*fit) {
            const Family fam = family_of(fit_model);
            OptimizerConfig opt;
            opt.seed = g.seed;
            FitResult fr;
            std::vector<double> lik_terms;
            auto sampled_terms = [](const std::vector<SampledNetFlow>& sampled, const LikelihoodConfig& lc,
                                    const FitResult& r) {
                std::vector<SampledNetFlow> kept;
                for (const auto& s : sampled)
                    if (s.size >= 2) kept.push_back(s);
                return SampledObjective(kept, lc).terms(r.model());
            };
            auto need_pmf = [&] {
                if (fit_pmf.empty()) throw ConfigError("--pmf is required for this estimator");
                return parse_pmf(fit_pmf);
            };
            auto lik_cfg = [&] {
                LikelihoodConfig lc;
                lc.pmf = need_pmf();
                lc.q = fit_q;
                lc.truncation = fit_trunc;
                lc.restricted = true;
                return lc;
            };
            if (fit_est == "mle" && fit_q == 1.0) {
                auto nf = netflows_of(fit_in);
                // without --pmf the size term (constant in the model) is left out
                std::optional<FlowSizePmf> pmf;
                if (!fit_pmf.empty()) pmf = need_pmf();
                fr = mle_netflow(nf, fam, pmf ? &*pmf : nullptr, opt, fit_rate, g.threads);
                if (!fit_trace_lik.empty()) {
                    std::vector<std::string> ignored;
                    NetFlowObjective obj(detail::informative(nf, ignored), pmf ? &*pmf : nullptr,
                                         PacketModel::exponential(fit_rate));
                    lik_terms = obj.terms(fr.model());
                }
            } else if (fit_est == "mle" || fit_est == "mle-sampled") {
                auto sampled = sampled_of(fit_in);
                auto lc = lik_cfg();
                fr = mle_sampled_netflow(sampled, fam, lc, opt, g.threads);
                if (!fit_trace_lik.empty()) lik_terms = sampled_terms(sampled, lc, fr);
            } else if (fit_est == "mle-standard") {
                if (!is_trace(fit_in)) {
                    std::ifstream in(fit_in);
                    std::vector<double> x;
                    double v;
                    while (in >> v) x.push_back(v);
                    fr = mle_standard(x, fam);
                } else {
                    IngestConfig ic;
                    fr = mle_standard(pooled_inter_renewals(read_trace(fit_in, ic).flows), fam);
                }
            } else if (fit_est == "mom" || fit_est == "mom-netflow") {
                MomResult r;
                auto t0 = std::chrono::steady_clock::now();
                long bytes = 0;
                if (fit_est == "mom") {
                    if (!is_trace(fit_in)) throw ConfigError("mom needs a packet trace (flow_id,timestamp_ns)");
                    auto flows = read_trace(fit_in).flows;
                    r = mom_hohn(flows);
                    bytes = serialized_bytes(pooled_inter_renewals(flows));
                } else {
                    auto nf = netflows_of(fit_in);
                    r = mom_netflow(nf);
                    bytes = serialized_bytes(nf);
                }
                fr.estimator = fit_est;
                fr.family = Family::Gamma;
                fr.names = {"alpha", "beta", "beta_star"};
                fr.params = {r.alpha, r.beta, r.beta_star};
                fr.loglik = std::numeric_limits<double>::quiet_NaN();
                fr.n_obs = r.n_used;
                fr.warnings = r.warnings;
                fr.data_bytes = bytes;
                fr.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            } else if (fit_est == "lognormal-two-step") {
                if (fit_q == 1.0) {
                    auto nf = netflows_of(fit_in);
                    fr = two_step_lognormal_mle(session_netflow(nf), opt);
                    fr.data_bytes = serialized_bytes(nf);
                } else {
                    auto sampled = sampled_of(fit_in);
                    auto lc = lik_cfg();
                    fr = two_step_lognormal_mle(sampled, lc, opt, g.threads);
                    if (!fit_trace_lik.empty()) lik_terms = sampled_terms(sampled, lc, fr);
                }
            }
            if (!fit_trace_lik.empty()) {
                if (lik_terms.empty()) throw ConfigError("--trace-lik needs a per-flow likelihood estimator");
                Output o(fit_trace_lik);
                o.stream() << "flow,loglik\n";
                char buf[64];
                for (std::size_t i = 0; i < lik_terms.size(); ++i) {
                    int n = std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, lik_terms[i]);
                    o.stream().write(buf, n);
                }
            }
            write_json(g, to_json(fr));
        } else if (*bound) {
            req.seed = g.seed;
            req.threads = g.threads;
            LikelihoodConfig lc;
            lc.pmf = parse_pmf(bound_pmf);
            lc.q = bound_q;
            auto model = parse_model(bound_model);
            auto info = info_summary(model, lc, req);
            auto nm = n_min_bounds(req, info);
            Json j = to_json(nm);
            j["info"] = to_json(info);
            j["epsilon"] = req.epsilon;
            j["eta"] = req.eta;
            j["k_flows"] = req.k_flows;
            write_json(g, j);
            for (const auto& w : nm.warnings) std::cerr << "warning: " << w << '\n';
        } else if (*surv) {
            std::vector<double> values;
            if (is_trace(surv_in)) {
                values = pooled_inter_renewals(read_trace(surv_in).flows);
            } else {
                std::ifstream in(surv_in);
                double v;
                while (in >> v) values.push_back(v);
            }
            std::optional<PacketModel> overlay;
            if (!surv_model.empty()) overlay = parse_model(surv_model);
            Output o(g.out);
            write_survival_csv(o.stream(), survival_curve(values, surv_points, overlay));
        } else if (*study) {
            Json j = load_json(study_config);
            StudyConfig sc;
            if (j.contains("session")) sc.session = session_from_json(j.at("session"));
            if (j.contains("family")) sc.family = family_from_string(j.at("family").get<std::string>());
            if (j.contains("estimators")) sc.estimators = j.at("estimators").get<std::vector<std::string>>();
            if (j.contains("n_grid")) sc.n_grid = j.at("n_grid").get<std::vector<long>>();
            if (j.contains("replicates")) sc.replicates = j.at("replicates").get<long>();
            if (j.contains("truncation")) sc.truncation = j.at("truncation").get<double>();
            if (j.contains("fast_thinning")) sc.fast_thinning = j.at("fast_thinning").get<bool>();
            sc.seed = j.contains("seed") && !app.count("--seed") ? j.at("seed").get<std::uint64_t>() : g.seed;
            if (study_reps > 0) sc.replicates = study_reps;
            if (!study_grid.empty()) sc.n_grid = study_grid;
            sc.optimizer.seed = sc.seed;
            sc.threads = g.threads;
            auto res = run_study(sc);
            if (omit_timing)
                for (auto& c : res.cells) c.time_ms.clear();
            Output o(g.out);
            write_study_csv(o.stream(), res);
        }
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 3;
    } catch (const DomainError& e) {
        std::cerr << "domain error: " << e.what() << '\n';
        return 4;
    } catch (const ConvergenceError& e) {
        std::cerr << "convergence error: " << e.what() << '\n';
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
