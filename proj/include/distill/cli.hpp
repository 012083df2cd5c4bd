#pragma once

// Command-line front end. Exit codes: 0 ok, 1 input error, 2 backend
// failure, 3 validation failure.

#include <cmath>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "distill/config.hpp"
#include "distill/dataset_io.hpp"
#include "distill/error.hpp"
#include "distill/filters.hpp"
#include "distill/pairgen.hpp"
#include "distill/pipeline.hpp"
#include "distill/quantize.hpp"
#include "distill/task_model.hpp"
#include "distill/wire.hpp"
#include "json.hpp"

namespace distill {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 1;
inline constexpr int kExitBackend = 2;
inline constexpr int kExitValidation = 3;

/// Backends for a run, owned.
struct BackendSet {
  std::unique_ptr<ToyBackends> toy;
  std::unique_ptr<RemoteGenerator> generator;
  std::unique_ptr<RemoteNliScorer> nli;
  std::unique_ptr<MemoizedScorer> memo;
  std::unique_ptr<BuiltinKeywordExtractor> keywords;
  Backends view;
};

inline BackendSet make_backends(const RunConfig& cfg) {
  BackendSet s;
  if (cfg.backend == Backend::toy) {
    s.toy = std::make_unique<ToyBackends>();
    s.view = s.toy->view();
  } else {
    s.generator = std::make_unique<RemoteGenerator>(cfg.generate_endpoint);
    s.nli = std::make_unique<RemoteNliScorer>(cfg.nli_endpoint);
    s.memo = std::make_unique<MemoizedScorer>(*s.nli);
    s.keywords = std::make_unique<BuiltinKeywordExtractor>();
    s.view = {s.generator.get(), s.memo.get(), s.keywords.get()};
  }
  return s;
}

// ---------------------------------------------------------------------------
// Intermediate files: contexts and candidate pairs

inline ojson context_to_json(const DomainContext& c) {
  ojson j;
  j["id"] = c.id;
  j["domain"] = to_string(c.domain);
  j["index"] = c.index;
  j["prefix"] = c.prefix_template;
  j["sentences"] = c.sentence_count;
  j["text"] = c.text.source_text;
  return j;
}

inline DomainContext context_from_json(const ojson& j) {
  DomainContext c;
  c.id = detail::field<std::string>(j, "id");
  c.domain = parse_domain(detail::field<std::string>(j, "domain"));
  c.index = detail::field<std::size_t>(j, "index");
  c.prefix_template = detail::field<std::string>(j, "prefix");
  c.sentence_count = detail::field<std::size_t>(j, "sentences");
  c.text = tokenize(detail::field<std::string>(j, "text"));
  if (c.text.empty()) throw InputError("context " + c.id + " has empty text");
  return c;
}

inline ojson pair_to_json(const CandidatePair& p, const std::string& context_text) {
  ojson j;
  j["pair_id"] = p.pair_id;
  j["context_id"] = p.context_id;
  j["context"] = context_text;
  j["x"] = p.x->source_text;
  j["y"] = p.y->source_text;
  j["provenance"] = to_string(p.provenance);
  j["domain"] = to_string(p.domain);
  ojson s = ojson::object();
  auto put = [&](const char* k, const std::optional<double>& v) {
    if (v) s[k] = *v;
  };
  put("entail_xy", p.scores.entail_xy);
  put("entail_yx", p.scores.entail_yx);
  put("rouge_l", p.scores.rouge_l);
  put("density", p.scores.density);
  put("density_norm", p.scores.density_norm);
  put("comp", p.scores.comp);
  j["scores"] = std::move(s);
  return j;
}

inline std::pair<CandidatePair, std::string> pair_from_json(const ojson& j) {
  CandidatePair p;
  p.pair_id = detail::field<std::string>(j, "pair_id");
  p.context_id = detail::field<std::string>(j, "context_id");
  p.x = std::make_shared<const TokenSeq>(tokenize(detail::field<std::string>(j, "x")));
  p.y = std::make_shared<const TokenSeq>(tokenize(detail::field<std::string>(j, "y")));
  if (p.x->empty() || p.y->empty()) throw InputError("pair " + p.pair_id + " has an empty side");
  p.provenance = parse_provenance(detail::field<std::string>(j, "provenance"));
  p.domain = parse_domain(detail::field<std::string>(j, "domain"));
  if (auto s = j.find("scores"); s != j.end() && s->is_object()) {
    p.scores.entail_xy = detail::optional_number(*s, "entail_xy");
    p.scores.entail_yx = detail::optional_number(*s, "entail_yx");
    p.scores.rouge_l = detail::optional_number(*s, "rouge_l");
    p.scores.density = detail::optional_number(*s, "density");
    p.scores.density_norm = detail::optional_number(*s, "density_norm");
    p.scores.comp = detail::optional_number(*s, "comp");
  }
  return {std::move(p), detail::field<std::string>(j, "context")};
}

/// Reads a JSONL file of arbitrary objects; errors carry the line number.
template <typename T, typename Parse>
std::vector<T> read_jsonl(const std::filesystem::path& path, Parse parse) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<T> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string where = path.string() + ": line " + std::to_string(n);
    if (in.eof()) throw InputError(where + ": partial trailing line (no newline)");
    try {
      out.push_back(parse(ojson::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(where + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError(where + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// validate

struct Violation {
  std::size_t line = 0;
  std::string pair_id;
  std::string reason;
};

/// Recomputes comp, sim and the metric scores from the record text and
/// re-checks group boundaries and the filter predicates of the record's
/// task mode. With a scorer, entailment is recomputed too.
inline std::vector<std::string> check_record(const DatasetRecord& r, const RunConfig& cfg,
                                             const EntailmentScorer* rescore = nullptr) {
  std::vector<std::string> why;
  const auto x = tokenize(r.x);
  const auto y = tokenize(r.y);
  if (x.empty() || y.empty()) return {"empty side"};
  const auto cs = comp_sim(x, y);
  constexpr double eps = 1e-9;
  auto same = [&](const char* name, double stored, double actual) {
    if (!(std::fabs(stored - actual) <= eps)) {
      why.push_back(std::string(name) + " is " + detail::format_double(stored) + ", recomputed " +
                    detail::format_double(actual));
    }
  };
  same("comp", r.comp, cs.comp);
  same("sim", r.sim, cs.sim);
  same("rouge_l", r.scores.rouge_l, cs.rouge_l);
  same("density", r.scores.density, cs.density);
  same("density_norm", r.scores.density_norm, cs.density_norm);
  if (!r.group) {
    why.push_back("no group");
    return why;
  }
  auto expected = assign_group(cs.comp, cs.sim);
  auto stored_expected = assign_group(r.comp, r.sim);
  if (!expected || *expected != *r.group) {
    why.push_back("group " + std::string(to_string(*r.group)) + " does not match recomputed (comp, sim) -> " +
                  (expected ? std::string(to_string(*expected)) : std::string("none")));
  } else if (!stored_expected || *stored_expected != *r.group) {
    why.push_back("stored (comp, sim) fall outside group " + std::string(to_string(*r.group)));
  }
  const TaskMode mode = task_mode(*r.group);
  const FilterConfig& fc = mode == TaskMode::summarization ? cfg.summarization : cfg.paraphrase;
  if (!length_filter(x.size(), y.size(), fc)) why.push_back("fails the length filter");
  if (mode == TaskMode::paraphrase && !abstractiveness_filter(cs.density_norm, cs.rouge_l, fc)) {
    why.push_back("fails the abstractiveness filter");
  }
  auto entail_check = [&](const char* name, const std::optional<double>& stored, const TokenSeq& p,
                          const TokenSeq& h) {
    if (!stored) {
      why.push_back(std::string("missing ") + name);
      return;
    }
    if (*stored < fc.tau_entail) why.push_back(std::string(name) + " below tau_entail");
    if (rescore) same(name, *stored, rescore->score(p, h).value());
  };
  entail_check("entail_xy", r.scores.entail_xy, x, y);
  if (mode == TaskMode::paraphrase) entail_check("entail_yx", r.scores.entail_yx, y, x);
  return why;
}

inline std::vector<Violation> validate_dataset(const std::filesystem::path& path, const RunConfig& cfg,
                                               const EntailmentScorer* rescore = nullptr) {
  std::vector<Violation> out;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::size_t line = 0;
  read_dataset(in, [&](DatasetRecord&& r) {
    ++line;
    for (auto& w : check_record(r, cfg, rescore)) out.push_back({line, r.pair_id, std::move(w)});
  });
  return out;
}

// ---------------------------------------------------------------------------
// Dispatch

namespace detail {

struct CliState {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string backend;
  std::string out;
  std::optional<std::size_t> workers;
  std::optional<std::size_t> contexts;
};

inline RunConfig load_config(const CliState& s) {
  RunConfig cfg;
  if (!s.config_path.empty()) cfg = parse_config(read_file(s.config_path));
  if (s.seed) cfg.generation.seed = *s.seed;
  if (!s.backend.empty()) cfg.backend = parse_backend(s.backend);
  if (s.workers) cfg.workers = *s.workers;
  if (s.contexts) cfg.contexts = *s.contexts;
  cfg.validate();
  return cfg;
}

inline std::filesystem::path out_or(const CliState& s, const char* fallback) {
  return s.out.empty() ? std::filesystem::path(fallback) : std::filesystem::path(s.out);
}

}  // namespace detail

inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
  CLI::App app{"Distillation pipeline for summarization and paraphrase datasets", "distill"};
  app.fallthrough();
  app.require_subcommand(1);
  detail::CliState st;
  app.add_option("--config", st.config_path, "key = value configuration file");
  app.add_option("--seed", st.seed, "random seed");
  app.add_option("--backend", st.backend, "model backends")->check(CLI::IsMember({"toy", "remote"}));
  app.add_option("--out", st.out, "output path");
  app.add_option("--workers", st.workers, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--contexts", st.contexts, "number of contexts")->check(CLI::PositiveNumber);

  auto* gen_contexts = app.add_subcommand("gen-contexts", "sample domain contexts");

  auto* gen_pairs = app.add_subcommand("gen-pairs", "generate candidate pairs");
  std::string pairs_in;
  gen_pairs->add_option("--in", pairs_in, "contexts JSONL (default: sample fresh contexts)");

  auto* filter = app.add_subcommand("filter", "apply the filter stack to candidate pairs");
  std::string filter_in, filter_mode = "summarization";
  filter->add_option("--in", filter_in, "candidate pairs JSONL")->required();
  filter->add_option("--mode", filter_mode, "task mode")->check(CLI::IsMember({"summarization", "paraphrase"}));

  auto* quantize = app.add_subcommand("quantize", "group filtered pairs into dataset records");
  std::string quantize_in, training_out, stage_name = "d0";
  quantize->add_option("--in", quantize_in, "filtered pairs JSONL")->required();
  quantize->add_option("--training", training_out, "also write control-code training JSONL");
  quantize->add_option("--stage", stage_name, "stage tag")->check(CLI::IsMember({"d0", "d1"}));

  auto* distill = app.add_subcommand("distill", "stage 0 end to end");
  bool resume = false, timestamps = false;
  std::string report_path, histogram_path, distill_training;
  std::optional<std::size_t> max_batches;
  distill->add_flag("--resume", resume, "continue from the checkpoint next to the output");
  distill->add_option("--report", report_path, "run report (default: <out>.report.json)");
  distill->add_option("--histogram", histogram_path, "histogram CSV (default: <out>.histogram.csv)");
  distill->add_option("--training", distill_training, "also write control-code training JSONL");
  distill->add_flag("--timestamps", timestamps, "record wall-clock time in the report");
  distill->add_option("--max-batches", max_batches, "stop after this many batches")->group("");

  auto* self = app.add_subcommand("self-distill", "regenerate pairs through a task model");
  std::string task_model = "identity", self_report;
  std::optional<std::size_t> inputs;
  self->add_option("--task-model", task_model, "task model")
      ->check(CLI::IsMember({"identity", "truncate-half", "remote"}));
  self->add_option("--inputs", inputs, "number of sampled inputs")->check(CLI::PositiveNumber);
  self->add_option("--report", self_report, "run report (default: <out>.report.json)");

  auto* stats = app.add_subcommand("stats", "histogram, lexical diversity and sample efficiency");
  std::string stats_in, stats_run_report;
  stats->add_option("dataset", stats_in, "dataset JSONL")->required();
  stats->add_option("--run-report", stats_run_report, "run report holding the counters for sample efficiency");

  auto* validate = app.add_subcommand("validate", "re-check group boundaries and filter predicates");
  std::string validate_in;
  bool rescore = false;
  validate->add_option("dataset", validate_in, "dataset JSONL")->required();
  validate->add_flag("--rescore", rescore, "recompute entailment with the configured backend");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitInput;
  }

  try {
    const RunConfig cfg = detail::load_config(st);

    if (*gen_contexts) {
      const auto path = detail::out_or(st, "contexts.jsonl");
      std::ofstream f(path, std::ios::binary | std::ios::trunc);
      if (!f) throw InputError("cannot write " + path.string());
      auto backends = make_backends(cfg);
      for (std::size_t g = 0; g < cfg.contexts; ++g) {
        f << context_to_json(run_context(*backends.view.generator, cfg, g)).dump() << '\n';
      }
      out << "wrote " << cfg.contexts << " contexts to " << path.string() << "\n";
      return kExitOk;
    }

    if (*gen_pairs) {
      auto backends = make_backends(cfg);
      std::vector<DomainContext> contexts;
      if (!pairs_in.empty()) {
        contexts = read_jsonl<DomainContext>(pairs_in, context_from_json);
      } else {
        for (std::size_t g = 0; g < cfg.contexts; ++g) contexts.push_back(run_context(*backends.view.generator, cfg, g));
      }
      CandidatePool pool(contexts, *backends.view.generator, cfg.generation, {cfg.sequential, cfg.parallel},
                         *backends.view.keywords);
      const auto path = detail::out_or(st, "pairs.jsonl");
      std::ofstream f(path, std::ios::binary | std::ios::trunc);
      if (!f) throw InputError("cannot write " + path.string());
      std::size_t n = 0;
      while (auto cp = pool.next()) {
        for (const auto& p : cp->pairs) {
          f << pair_to_json(p, cp->context->text.source_text).dump() << '\n';
          ++n;
        }
      }
      for (const auto& fail : pool.failures()) err << "context " << fail.context_id << " failed: " << fail.message << "\n";
      out << "wrote " << n << " pairs (" << pool.sequential_count() << " sequential, " << pool.parallel_count()
          << " parallel) to " << path.string() << "\n";
      return kExitOk;
    }

    if (*filter) {
      auto backends = make_backends(cfg);
      auto rows = read_jsonl<std::pair<CandidatePair, std::string>>(filter_in, pair_from_json);
      std::map<std::string, std::string> context_text;
      std::vector<CandidatePair> pairs;
      for (auto& [p, c] : rows) {
        context_text[p.context_id] = c;
        pairs.push_back(std::move(p));
      }
      const auto& fc = parse_task_mode(filter_mode) == TaskMode::summarization ? cfg.summarization : cfg.paraphrase;
      auto res = apply_filters(std::move(pairs), *backends.view.nli, fc);
      const auto path = detail::out_or(st, "filtered.jsonl");
      std::ofstream f(path, std::ios::binary | std::ios::trunc);
      if (!f) throw InputError("cannot write " + path.string());
      for (const auto& p : res.survivors) f << pair_to_json(p, context_text[p.context_id]).dump() << '\n';
      out << census_to_json(res.census).dump(2) << "\n";
      return kExitOk;
    }

    if (*quantize) {
      auto rows = read_jsonl<std::pair<CandidatePair, std::string>>(quantize_in, pair_from_json);
      std::vector<DatasetRecord> records;
      std::size_t none = 0;
      for (const auto& [p, c] : rows) {
        auto r = quantize_pair(p, c, parse_stage(stage_name));
        if (r) {
          records.push_back(std::move(*r));
        } else {
          ++none;
        }
      }
      const auto path = detail::out_or(st, "dataset.jsonl");
      write_dataset(path, records);
      if (!training_out.empty()) write_training_file(training_out, records);
      out << "wrote " << records.size() << " records to " << path.string() << " (" << none << " outside every group)\n";
      return kExitOk;
    }

    if (*distill) {
      auto backends = make_backends(cfg);
      Stage0Options opts;
      opts.output = detail::out_or(st, "d0.jsonl");
      opts.resume = resume;
      opts.max_batches = max_batches;
      Stage0Result res;
      try {
        res = run_stage0(backends.view, cfg, opts);
      } catch (const TransportError& e) {
        err << "backend failure: " << e.what() << "\ncheckpoint kept; rerun with --resume to continue\n";
        return kExitBackend;
      }
      if (!res.complete) {
        out << "stopped after " << res.batches_done << " of " << res.batches_total
            << " batches; rerun with --resume to continue\n";
        return kExitOk;
      }
      const auto records = read_dataset(opts.output);
      std::optional<std::string> stamp;
      if (timestamps) {
        stamp = std::to_string(
            std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
                .count());
      }
      const auto report = run_report("d0", cfg, res.counters, res.failures, records, stamp);
      write_file(report_path.empty() ? opts.output.string() + ".report.json" : report_path, report.dump(2) + "\n");
      if (!records.empty()) {
        std::vector<DatasetRecord> summaries;
        for (const auto& r : records) {
          if (task_mode(*r.group) == TaskMode::summarization) summaries.push_back(r);
        }
        if (!summaries.empty()) {
          write_file(histogram_path.empty() ? opts.output.string() + ".histogram.csv" : histogram_path,
                     histogram_csv(strategy_histogram(summaries)));
        }
      }
      if (!distill_training.empty()) write_training_file(distill_training, records);
      out << "wrote " << records.size() << " records to " << opts.output.string() << " from " << res.counters.contexts
          << " contexts\n";
      return kExitOk;
    }

    if (*self) {
      auto backends = make_backends(cfg);
      std::unique_ptr<TaskModel> tm;
      if (task_model == "identity") {
        tm = std::make_unique<IdentityTaskModel>();
      } else if (task_model == "truncate-half") {
        tm = std::make_unique<TruncateHalfTaskModel>();
      } else {
        tm = std::make_unique<RemoteTaskModel>(cfg.infer_endpoint);
      }
      const std::size_t n = inputs.value_or(cfg.self_distill_inputs);
      SelfDistillResult res;
      try {
        res = run_self_distill(*backends.view.generator, *backends.view.nli, *tm, cfg, n);
      } catch (const TransportError& e) {
        err << "backend failure: " << e.what() << "\n";
        return kExitBackend;
      }
      const auto path = detail::out_or(st, "d1.jsonl");
      write_dataset(path, res.records);
      auto report = run_report("d1", cfg, res.counters, res.failures, res.records);
      report["inputs"] = res.inputs;
      report["inputs_failed"] = res.inputs_failed;
      write_file(self_report.empty() ? path.string() + ".report.json" : self_report, report.dump(2) + "\n");
      out << "wrote " << res.records.size() << " records to " << path.string() << " from " << res.inputs
          << " inputs (" << res.inputs_failed << " failed)\n";
      return kExitOk;
    }

    if (*stats) {
      const auto records = read_dataset(stats_in);
      std::optional<RunCounters> counters;
      if (!stats_run_report.empty()) {
        try {
          counters = counters_from_json(ojson::parse(read_file(stats_run_report)).at("counters"));
        } catch (const nlohmann::json::exception& e) {
          throw InputError("unreadable run report: " + std::string(e.what()));
        }
      }
      const auto j = dataset_stats(records, counters ? &*counters : nullptr).dump(2) + "\n";
      if (st.out.empty()) {
        out << j;
      } else {
        write_file(st.out, j);
      }
      return kExitOk;
    }

    if (*validate) {
      std::unique_ptr<BackendSet> backends;
      if (rescore) backends = std::make_unique<BackendSet>(make_backends(cfg));
      const auto violations = validate_dataset(validate_in, cfg, backends ? backends->view.nli : nullptr);
      if (violations.empty()) {
        out << "ok: " << validate_in << "\n";
        return kExitOk;
      }
      for (const auto& v : violations) {
        err << validate_in << ":" << v.line << ": record " << v.pair_id << ": " << v.reason << "\n";
      }
      throw ValidationError(std::to_string(violations.size()) + " violation(s) in " + validate_in);
    }
  } catch (const ValidationError& e) {
    err << "validation failed: " << e.what() << "\n";
    return kExitValidation;
  } catch (const TransportError& e) {
    err << "backend failure: " << e.what() << "\n";
    return kExitBackend;
  } catch (const ProtocolError& e) {
    err << "backend protocol error: " << e.what() << "\n";
    return kExitBackend;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
  err << app.help();
  return kExitInput;
}

}  // namespace distill
