#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "gameprior/parallel.hpp"

using namespace gameprior;

TEST_CASE("thread cap from the environment") {
  const char* old = std::getenv("GAMEPRIOR_THREADS");
  const std::string saved = old ? old : "";
  setenv("GAMEPRIOR_THREADS", "1", 1);
  CHECK(worker_count() == 1);
  setenv("GAMEPRIOR_THREADS", "100000", 1);
  CHECK(worker_count() >= 1);
  if (old) setenv("GAMEPRIOR_THREADS", saved.c_str(), 1);
  else unsetenv("GAMEPRIOR_THREADS");
}

TEST_CASE("parallel_for visits every index once") {
  std::vector<std::atomic<int>> hits(257);
  parallel_for(hits.size(), [&](std::size_t i) { ++hits[i]; });
  for (const auto& h : hits) CHECK(h.load() == 1);
  parallel_for(0, [](std::size_t) { FAIL("called"); });
}

TEST_CASE("parallel_for rethrows the lowest failing index") {
  try {
    parallel_for(50, [](std::size_t i) {
      if (i == 7 || i == 31) throw std::runtime_error("item " + std::to_string(i));
    });
    FAIL("expected an exception");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()) == "item 7");
  }
}
