#pragma once

// Reference scorers written from the metric definitions with plain loops,
// sharing nothing with the library's evaluation code.

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "biorag/evaluation.hpp"
#include "test_support.hpp"

namespace biorag::testing {



inline double ref_ap(const std::vector<std::string>& ranked, const std::vector<std::string>& gold) {
    std::vector<std::string> g = gold;
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end()), g.end());
    auto is_rel = [&](std::size_t k) {
        if (!std::binary_search(g.begin(), g.end(), ranked[k])) return false;
        for (std::size_t j = 0; j < k; ++j) {
            if (ranked[j] == ranked[k]) return false;
        }
        return true;
    };
    double total = 0;
    for (std::size_t k = 0; k < ranked.size() && k < 10; ++k) {
        if (!is_rel(k)) continue;
        std::size_t rel_upto = 0;
        for (std::size_t j = 0; j <= k; ++j) rel_upto += is_rel(j);
        total += double(rel_upto) / double(k + 1);
    }
    return g.empty() ? 0 : total / double(g.size());
}

struct RefPRF {
    double p, r, f;
};

inline RefPRF ref_doc_prf(const std::vector<std::string>& ranked, const std::vector<std::string>& gold) {
    std::set<std::string> g(gold.begin(), gold.end()), found;
    std::size_t rel = 0;
    for (const auto& d : ranked) {
        if (g.count(d) && !found.count(d)) {
            ++rel;
            found.insert(d);
        }
    }
    const double p = ranked.empty() ? 0 : double(rel) / double(ranked.size());
    const double r = double(found.size()) / double(g.size());
    return {p, r, (p == 0 && r == 0) ? 0 : 2 * p * r / (p + r)};
}

inline std::string ref_norm(std::string s) {
    std::string kept;
    for (char c : s) {
        if (std::string_view("!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~").find(c) != std::string_view::npos) continue;
        kept += (c >= 'A' && c <= 'Z') ? char(c - 'A' + 'a') : c;
    }
    std::istringstream words(kept);
    std::string w, out;
    while (words >> w) out += (out.empty() ? "" : " ") + w;
    return out;
}

inline bool ref_match(const Synonyms& a, const std::vector<Synonyms>& gold) {
    for (const auto& g : gold)
        for (const auto& x : a)
            for (const auto& y : g)
                if (!ref_norm(x).empty() && ref_norm(x) == ref_norm(y)) return true;
    return false;
}

inline std::vector<std::string> random_ids(std::mt19937_64& rng, std::size_t max) {
    std::vector<std::string> v;
    for (std::size_t i = 0, n = pick(rng, max + 1); i < n; ++i) {
        const auto id = "d" + std::to_string(pick(rng, 15));
        if (std::find(v.begin(), v.end(), id) == v.end()) v.push_back(id);
    }
    return v;
}

inline Synonyms random_entity(std::mt19937_64& rng) {
    static const std::vector<std::string> names = {"BRCA1", "brca1 ", "TP53", "p-53", "MDM2", "Mdm2.", "EGFR", "ALK"};
    Synonyms s;
    for (std::size_t i = 0, n = 1 + pick(rng, 2); i < n; ++i) s.push_back(names[pick(rng, names.size())]);
    return s;
}


struct RefYesNo {
    double accuracy, f1_yes, f1_no;
};

inline RefYesNo ref_yesno(const std::vector<YesNoPair>& p) {
    if (p.empty()) return {0, 0, 0};
    auto f1 = [&](const std::string& cls) {
        double tp = 0, pp = 0, gp = 0;
        for (const auto& x : p) {
            const bool pred = x.predicted == cls;
            tp += pred && x.gold == cls;
            pp += pred;
            gp += x.gold == cls;
        }
        const double prec = pp ? tp / pp : 0, rec = gp ? tp / gp : 0;
        return prec + rec ? 2 * prec * rec / (prec + rec) : 0;
    };
    double acc = 0;
    for (const auto& x : p) acc += x.predicted == x.gold;
    return {acc / double(p.size()), f1("yes"), f1("no")};
}

struct RefFactoid {
    double strict, lenient, mrr;
};

inline RefFactoid ref_factoid(const std::vector<EntityPair>& pairs) {
    double strict = 0, lenient = 0, mrr = 0;
    for (const auto& e : pairs) {
        for (std::size_t k = 0; k < e.predicted.size() && k < 5; ++k) {
            if (ref_match(e.predicted[k], e.gold)) {
                strict += k == 0;
                lenient += 1;
                mrr += 1.0 / double(k + 1);
                break;
            }
        }
    }
    const double n = pairs.empty() ? 1 : double(pairs.size());
    return {strict / n, lenient / n, mrr / n};
}

struct RefList {
    double precision, recall, f;
};

// repeats of an identical normalized synonym set count once
inline RefList ref_list(const std::vector<EntityPair>& pairs) {
    double lp = 0, lr = 0, lf = 0;
    for (const auto& e : pairs) {
        std::vector<std::set<std::string>> keys;
        std::vector<Synonyms> uniq;
        for (const auto& s : e.predicted) {
            std::set<std::string> key;
            for (const auto& x : s)
                if (!ref_norm(x).empty()) key.insert(ref_norm(x));
            if (key.empty() || std::find(keys.begin(), keys.end(), key) != keys.end()) continue;
            keys.push_back(key);
            uniq.push_back(s);
        }
        double hit = 0, cov = 0;
        for (const auto& u : uniq) hit += ref_match(u, e.gold);
        for (const auto& g : e.gold) {
            for (const auto& u : uniq) {
                if (ref_match(u, {g})) {
                    cov += 1;
                    break;
                }
            }
        }
        const double p = uniq.empty() ? 0 : hit / double(uniq.size()), r = e.gold.empty() ? 0 : cov / double(e.gold.size());
        lp += p;
        lr += r;
        lf += p + r ? 2 * p * r / (p + r) : 0;
    }
    const double n = pairs.empty() ? 1 : double(pairs.size());
    return {lp / n, lr / n, lf / n};
}

inline std::vector<YesNoPair> random_yesno_pairs(std::mt19937_64& rng, std::size_t max) {
    static const std::vector<std::optional<std::string>> preds = {"yes", "no", std::nullopt, "maybe"};
    std::vector<YesNoPair> p;
    for (std::size_t i = 0, n = pick(rng, max + 1); i < n; ++i) {
        p.push_back({preds[pick(rng, 4)], pick(rng, 2) ? "yes" : "no"});
    }
    return p;
}

inline std::vector<EntityPair> random_entity_pairs(std::mt19937_64& rng, std::size_t max) {
    std::vector<EntityPair> pairs;
    for (std::size_t i = 0, n = 1 + pick(rng, max); i < n; ++i) {
        EntityPair e;
        for (std::size_t k = 0, m = pick(rng, 6); k < m; ++k) e.predicted.push_back(random_entity(rng));
        for (std::size_t k = 0, m = 1 + pick(rng, 3); k < m; ++k) e.gold.push_back(random_entity(rng));
        pairs.push_back(std::move(e));
    }
    return pairs;
}

}  // namespace biorag::testing
