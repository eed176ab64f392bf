#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "scenekg/algebra.hpp"
#include "scenekg/dsl.hpp"
#include "scenekg/error.hpp"
#include "scenekg/json_io.hpp"
#include "scenekg/scene_kg.hpp"

namespace scenekg {

/// Text in, text out. Returns statements to run or FINAL(<answer or program>).
/// Transport problems are reported as Error{ErrorKind::transport}.
class Planner {
public:
    virtual ~Planner() = default;
    virtual std::string next_action(const std::string& prompt) = 0;
};

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_lines(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto nl = s.find('\n', start);
        if (nl == std::string_view::npos) {
            out.emplace_back(s.substr(start));
            break;
        }
        out.emplace_back(s.substr(start, nl - start));
        start = nl + 1;
    }
    return out;
}

// Text after the last answer or error marker in the prompt's observations.
inline std::optional<std::string> last_observed_answer(const std::string& prompt) {
    const auto lines = split_lines(prompt);
    for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
        const std::string line = trim(*it);
        for (const std::string_view marker : {"-> answer: ", "-> error: "}) {
            const auto p = line.rfind(marker);
            if (p == std::string::npos) continue;
            const std::string rest = line.substr(p + marker.size());
            return marker == "-> error: " ? "error: " + rest : rest;
        }
        if (line.rfind("Observation: error: ", 0) == 0) return line.substr(13);
        if (line.rfind("Observation:", 0) == 0) break;  // latest observation carries no answer
    }
    return std::nullopt;
}

}  // namespace detail

/// Replays a fixed program: the whole program first, then FINAL with the
/// answer it observed.
class ScriptedPlanner : public Planner {
public:
    explicit ScriptedPlanner(std::string program) : program_(std::move(program)) {}

    std::string next_action(const std::string& prompt) override {
        if (calls_++ == 0) return program_;
        const auto answer = detail::last_observed_answer(prompt);
        return "FINAL(" + answer.value_or("error: program result is a set, not an answer") + ")";
    }

    int calls() const { return calls_; }

private:
    std::string program_;
    int calls_ = 0;
};

struct Exemplar {
    std::string question;
    std::string program;
};

struct PromptTemplate {
    std::string role_block;
    std::string algebra_block;
    std::string rules_block;
    std::vector<Exemplar> exemplars;
    std::string question_slot = "Question: ";

    /// Every exemplar program must parse and check against `schema`.
    void validate(const Schema& schema) const {
        for (const auto& e : exemplars) {
            try {
                dsl::typecheck(dsl::parse(e.program), schema, {}, {true});
            } catch (const ParseError& p) {
                fail(ErrorKind::spec, "exemplar '" + e.question + "' does not parse: " + p.what());
            } catch (const Error& err) {
                fail(ErrorKind::spec, "exemplar '" + e.question + "' is invalid: " + err.what());
            }
        }
    }
};

inline PromptTemplate default_prompt_template() {
    PromptTemplate t;
    t.role_block =
        "[Role]\n"
        "You answer questions about one driving scene. You cannot see the scene directly; you can only\n"
        "call the operators below on its object graph and read what they return.\n";
    t.algebra_block =
        "[Operators]\n"
        "Resolve(type='C', status='S')        objects matching the filters, nearest to ego first\n"
        "RelSelect(X, 'R', type=..., status=...) objects in direction R of the first member of X,\n"
        "                                       nearest to that anchor first\n"
        "Intersect(X, Y)                      members of X also in Y, in X's order\n"
        "Count(X)                             number of members\n"
        "Exists(X)                            yes if X is not empty, otherwise no\n"
        "GetType(X)                           category of the first member\n"
        "GetStatus(X)                         status of the first member\n"
        "SameStatus(X, Y)                     yes if the first members share a status\n";
    t.rules_block =
        "[Rules]\n"
        "Write statements separated by ';'. Name intermediate sets with 'name = ...'.\n"
        "Directions are relative to the ego heading and must be one of: front, front_left, back_left,\n"
        "back, back_right, front_right. There is no plain left or right; pick the front or back variant.\n"
        "Categories: car, truck, bus, pedestrian, cyclist, motorcycle, barrier, traffic_cone.\n"
        "Statuses: moving, stopped, parked, standing, static.\n"
        "Count, Exists, GetType, GetStatus and SameStatus return answers and cannot be used as sets.\n"
        "After reading an observation, either send more statements or reply FINAL(answer).\n";
    t.exemplars = {
        {"How many cars are ahead of the standing pedestrian?",
         "ped = Resolve(type='pedestrian', status='standing');\n"
         "cars = RelSelect(ped, 'front', type='car');\n"
         "Count(cars);"},
        {"Is there any bus in the scene?", "Exists(Resolve(type='bus'));"},
        {"What is the object to the front left of the stopped truck?",
         "truck = Resolve(type='truck', status='stopped');\n"
         "obj = RelSelect(truck, 'front_left');\n"
         "GetType(obj);"},
        {"Is the car behind the cyclist in the same state as the cyclist?",
         "cyc = Resolve(type='cyclist');\n"
         "car = RelSelect(cyc, 'back', type='car');\n"
         "SameStatus(car, cyc);"},
        {"What is the truck on the back right of the barrier doing?",
         "bar = Resolve(type='barrier');\n"
         "GetStatus(RelSelect(bar, 'back_right', type='truck'));"},
    };
    return t;
}

struct Turn {
    std::string action;
    std::string observation;
};

/// Deterministic prompt: fixed blocks, exemplars, the transcript so far, then
/// the question.
inline std::string render_prompt(const PromptTemplate& t, const std::string& question,
                                 const std::vector<Turn>& transcript) {
    std::string out = t.role_block + "\n" + t.algebra_block + "\n" + t.rules_block + "\n[Examples]\n";
    for (const auto& e : t.exemplars) out += t.question_slot + e.question + "\nAction:\n" + e.program + "\n\n";
    if (!transcript.empty()) {
        out += "[Progress]\n";
        for (const auto& turn : transcript) {
            out += "Action:\n" + turn.action + "\n";
            const auto lines = detail::split_lines(turn.observation);
            for (std::size_t i = 0; i < lines.size(); ++i) out += (i ? "  " : "Observation: ") + lines[i] + "\n";
        }
        out += "\n";
    }
    out += "[Task]\n" + t.question_slot + question + "\n";
    return out;
}

enum class SessionState { open, answered, exhausted };

inline std::string_view to_string(SessionState s) {
    switch (s) {
        case SessionState::open: return "open";
        case SessionState::answered: return "answered";
        case SessionState::exhausted: return "exhausted";
    }
    return "";
}

struct Session {
    std::uint64_t kg_uid = 0;
    dsl::Env env;
    std::vector<Turn> transcript;
    int step_budget = 16;
    int planner_calls = 0;
    SessionState state = SessionState::open;
    Answer answer = Answer::of_error("no answer");
};

/// Raised when the planner cannot be reached. The transcript up to that
/// point is kept.
class SessionError : public Error {
public:
    SessionError(const std::string& msg, Session s) : Error(ErrorKind::transport, msg), session_(std::move(s)) {}
    const Session& session() const { return session_; }

private:
    Session session_;
};

inline std::string transcript_to_jsonl(const Session& s) {
    std::string out;
    for (std::size_t i = 0; i < s.transcript.size(); ++i)
        out += ObjectWriter()
                   .field("record_type", "turn")
                   .field("step", i + 1)
                   .field("action", s.transcript[i].action)
                   .field("observation", s.transcript[i].observation)
                   .str() +
               "\n";
    out += ObjectWriter()
               .field("record_type", "outcome")
               .field("state", to_string(s.state))
               .field("answer", s.answer.render())
               .field("planner_calls", s.planner_calls)
               .str() +
           "\n";
    return out;
}

namespace detail {

inline void check_grounded(const SceneKg& kg, const dsl::Env& env) {
    for (const auto& [name, v] : env)
        if (const auto* u = std::get_if<EntitySet>(&v); u && !is_valid_entity_set(kg, *u))
            fail(ErrorKind::invalid_argument, "variable '" + name + "' holds ids outside the graph");
}

inline std::string render_trace(const dsl::ExecResult& r) {
    std::string out;
    for (const auto& t : r.trace) out += (out.empty() ? "" : "\n") + t.render();
    return out;
}

inline std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

// Runs statements against the session env. Assignments stick even if a later
// statement in the same action fails.
inline dsl::ExecResult run_action(const std::string& text, const SceneKg& kg, const EngineConfig& cfg, Session& s,
                                  int& temp_counter) {
    const auto types = dsl::type_env(s.env);
    const auto program = dsl::parse(text, types);
    dsl::typecheck(program, kg.schema(), types);
    auto flat = dsl::desugar(program, temp_counter);
    for (const auto& f : flat)
        if (f.target.rfind('$', 0) == 0) ++temp_counter;
    auto r = dsl::execute_flat(flat, kg, cfg, s.env);
    check_grounded(kg, s.env);
    return r;
}

inline std::string error_observation(const std::exception& e) {
    if (const auto* err = dynamic_cast<const Error*>(&e)) return "error: " + err->structured();
    return std::string("error: ") + e.what();
}

}  // namespace detail

/// Plan-execute-observe loop. The planner is invoked at most
/// cfg.step_budget times.
inline std::pair<Answer, Session> run_session(const std::string& question, const SceneKg& kg, Planner& planner,
                                              const PromptTemplate& tmpl, const EngineConfig& cfg) {
    Session s;
    s.kg_uid = kg.uid();
    s.step_budget = cfg.step_budget;
    int temps = 0;
    while (s.planner_calls < s.step_budget) {
        const std::string prompt = render_prompt(tmpl, question, s.transcript);
        std::string reply;
        ++s.planner_calls;
        try {
            reply = planner.next_action(prompt);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::transport) throw;
            throw SessionError(e.what(), s);
        }
        const std::string action = detail::trim(reply);
        Turn turn{action, {}};

        const bool is_final = action.rfind("FINAL(", 0) == 0 && action.size() >= 7 && action.back() == ')';
        if (is_final) {
            const std::string inner = detail::trim(std::string_view(action).substr(6, action.size() - 7));
            const bool literal = inner.rfind("error:", 0) == 0 || inner.find('(') == std::string::npos;
            if (literal) {
                const std::string norm = (detail::lower(inner) == "yes" || detail::lower(inner) == "no") ? detail::lower(inner) : inner;
                try {
                    s.answer = parse_answer(norm, kg.schema());
                    s.state = SessionState::answered;
                    turn.observation = "final answer: " + s.answer.render();
                } catch (const Error& e) {
                    turn.observation = detail::error_observation(e);
                }
            } else {
                try {
                    const auto r = detail::run_action(inner, kg, cfg, s, temps);
                    turn.observation = detail::render_trace(r);
                    if (r.failed || !r.final_set) {
                        s.answer = r.answer;
                        s.state = SessionState::answered;
                    }
                } catch (const std::exception& e) {
                    turn.observation = detail::error_observation(e);
                }
            }
        } else {
            try {
                turn.observation = detail::render_trace(detail::run_action(action, kg, cfg, s, temps));
            } catch (const std::exception& e) {
                turn.observation = detail::error_observation(e);
            }
        }
        s.transcript.push_back(std::move(turn));
        if (s.state == SessionState::answered) return {s.answer, s};
    }
    s.state = SessionState::exhausted;
    s.answer = Answer::of_error("budget exhausted");
    return {s.answer, s};
}

}  // namespace scenekg
