#pragma once

// Acceptance criteria shared by the acceptance runner and `eval --self-test`.

#include <functional>
#include <ostream>
#include <string>
#include <vector>

namespace acceptance {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    std::function<Outcome()> run;
};

std::vector<Criterion> criteria();

/// Runs the criteria whose ids are listed (all when empty), printing one
/// line per criterion. Returns the number of failures.
int run(const std::vector<int>& ids, std::ostream& out);

}  // namespace acceptance
