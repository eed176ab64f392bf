#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "test_util.hpp"

namespace testutil {

// Grammar-driven generator over the eight operators.
class Fuzzer {
public:
    explicit Fuzzer(std::uint64_t seed) : rng_(seed) {}

    std::string program() {
        vars_.clear();
        std::string out;
        const int n = 1 + pick(4);
        for (int i = 0; i < n; ++i) {
            const bool last = i + 1 == n;
            const bool scalar = last && pick(2) == 0;
            std::string name;
            if (!last || pick(2)) {
                name = "v" + std::to_string(i);
                out += name + (pick(2) ? " = " : "=");
            }
            out += scalar ? scalar_call(2) : set_call(2);
            if (!name.empty() && !scalar) vars_.push_back(name);
            out += last && pick(2) ? "" : (pick(2) ? ";\n" : " ; ");
        }
        return out;
    }

private:
    int pick(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng_); }

    std::string label(const std::vector<std::string>& v) { return "'" + v[static_cast<std::size_t>(pick(static_cast<int>(v.size())))] + "'"; }

    std::string filters(bool required) {
        std::vector<std::string> kw;
        if (pick(2) || required) kw.push_back("type=" + label(schema().categories()));
        if (pick(2)) kw.push_back("status=" + label(schema().statuses()));
        if (pick(2)) std::reverse(kw.begin(), kw.end());
        std::string out;
        for (const auto& k : kw) out += ", " + k;
        return out;
    }

    std::string set_arg(int depth) {
        if (!vars_.empty() && (depth == 0 || pick(2))) return vars_[static_cast<std::size_t>(pick(static_cast<int>(vars_.size())))];
        return set_call(depth > 0 ? depth - 1 : 0);
    }

    std::string set_call(int depth) {
        const int choice = depth == 0 ? 0 : pick(3);
        if (choice == 0) {
            std::string f = filters(true);
            return "Resolve(" + f.substr(2) + ")";
        }
        if (choice == 1) {
            return "RelSelect(" + set_arg(depth - 1) + ", " + label(schema().relations()) + filters(false) + ")";
        }
        return "Intersect(" + set_arg(depth - 1) + ",  " + set_arg(depth - 1) + ")";
    }

    std::string scalar_call(int depth) {
        static const char* unary[] = {"Count", "Exists", "GetType", "GetStatus"};
        if (pick(5) == 0) return "SameStatus(" + set_arg(depth) + ", " + set_arg(depth) + ")";
        return std::string(unary[pick(4)]) + "(" + set_arg(depth) + ")";
    }

    std::mt19937_64 rng_;
    std::vector<std::string> vars_;
};

/// Hand-written programs covering every operator and the surface sugar.
inline const std::vector<std::string>& dsl_hand_corpus() {
    static const std::vector<std::string> corpus{
        "truck = Resolve(type='truck', status='stopped'); car = RelSelect(truck, 'front_left', type='car'); Count(car)",
        "Count(RelSelect(Resolve(type='pedestrian', status='standing'), 'front', type='car'))",
        "Exists(Resolve(type='bus'))",
        "a = Resolve(status='moving');b=Resolve(type='car');\nGetType(Intersect(a, b));",
        "SameStatus(Resolve(type='car'), RelSelect(Resolve(type='bus'), 'back'))",
        "x = Resolve(status='parked', type='car'); GetStatus(x)",
    };
    return corpus;
}

}  // namespace testutil
