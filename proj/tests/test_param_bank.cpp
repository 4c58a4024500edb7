#include <catch2/catch.hpp>

#include <filesystem>

#include "gnas/param_bank.hpp"
#include "gnas/rng.hpp"

using namespace gnas;

TEST_CASE("adam leaves parameters alone under zero gradient and zero decay") {
    ParamBank bank;
    Param& w = bank.create("w", 2, 2);
    for (auto& v : w.value.data()) v = 0.7;
    w.ensure_grad();
    w.grad_populated = true;
    AdamConfig cfg;
    cfg.weight_decay = 0.0;
    adam_step(bank, cfg);
    for (double v : w.value.data()) REQUIRE(v == Approx(0.7).margin(1e-12));
}

TEST_CASE("one adam step on a scalar matches the hand formula") {
    ParamBank bank;
    Param& w = bank.create("w", 1, 1);
    w.value(0, 0) = 1.0;
    w.ensure_grad();
    w.grad(0, 0) = 1.0;
    w.grad_populated = true;
    AdamConfig cfg;
    cfg.lr = 0.005;
    cfg.weight_decay = 0.0;
    adam_step(bank, cfg);
    // t=1: mhat=g, vhat=g^2 -> step = lr * g/(|g| + eps)
    double expected = 1.0 - 0.005 * (1.0 / (1.0 + cfg.eps));
    REQUIRE(w.value(0, 0) == Approx(expected).margin(1e-12));
    REQUIRE(w.grad(0, 0) == 0.0); // zeroed afterwards
    REQUIRE_FALSE(w.grad_populated);
}

TEST_CASE("decoupled weight decay shrinks by (1 - lr*wd) when g = 0") {
    ParamBank bank;
    Param& w = bank.create("w", 1, 1);
    w.value(0, 0) = 2.0;
    w.ensure_grad();
    w.grad_populated = true; // populated with zero gradient
    AdamConfig cfg;
    cfg.lr = 0.005;
    cfg.weight_decay = 3e-4;
    adam_step(bank, cfg);
    REQUIRE(w.value(0, 0) == Approx(2.0 * (1.0 - 0.005 * 3e-4)).margin(1e-15));
}

TEST_CASE("adam without populated gradients is an error") {
    ParamBank bank;
    bank.create("w", 1, 1);
    REQUIRE_THROWS_WITH(adam_step(bank, AdamConfig{}), Catch::Contains("no gradients"));
}

TEST_CASE("adam only touches populated entries") {
    ParamBank bank;
    Param& a = bank.create("a", 1, 1);
    Param& b = bank.create("b", 1, 1);
    a.value(0, 0) = b.value(0, 0) = 1.0;
    a.ensure_grad();
    a.grad(0, 0) = 0.5;
    a.grad_populated = true;
    adam_step(bank, AdamConfig{});
    REQUIRE(a.value(0, 0) != 1.0);
    REQUIRE(b.value(0, 0) == 1.0);
    REQUIRE(b.step == 0);
}

TEST_CASE("bank serialization round-trips bit-exactly") {
    Rng rng(9);
    ParamBank bank;
    for (const char* name : {"layer1.W", "classifier.concat1.W", "lstm.fw.wxi"}) {
        Param& p = bank.create(name, rng.uniform_int(1, 5), rng.uniform_int(1, 5));
        for (auto& v : p.value.data()) v = rng.normal();
    }
    auto path = std::filesystem::temp_directory_path() / "gnas_bank_test.bin";
    save_bank(bank, path.string());
    ParamBank loaded = load_bank(path.string());
    REQUIRE(loaded.entries.size() == bank.entries.size());
    REQUIRE(bank_checksum(loaded) == bank_checksum(bank));
    for (auto& [name, p] : bank.entries)
        REQUIRE(loaded.at(name).value.data() == p.value.data());
    std::filesystem::remove(path);
}

TEST_CASE("loading garbage fails cleanly") {
    auto path = std::filesystem::temp_directory_path() / "gnas_bank_garbage.bin";
    {
        std::ofstream out(path, std::ios::binary);
        out << "not a bank";
    }
    REQUIRE_THROWS_WITH(load_bank(path.string()), Catch::Contains("not a bank"));
    std::filesystem::remove(path);
}
