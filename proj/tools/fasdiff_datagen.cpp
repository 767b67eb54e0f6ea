// Renders the synthetic labeled face corpus used for training and
// evaluation. Kept out of the main CLI so the compression tool's command
// grammar stays limited to pipeline operations.
#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fasdiff/fasdiff.h"

int main(int argc, char** argv) {
    CLI::App app{"synthetic face corpus generator"};
    std::string dir;
    int count = 64;
    int size = 64;
    uint64_t seed = 7;
    app.add_option("--dir", dir, "output directory")->required();
    app.add_option("--count", count, "number of images");
    app.add_option("--size", size, "square image size in pixels");
    app.add_option("--seed", seed, "generator seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    auto st = fasdiff_generate_dataset(dir.c_str(), count, seed, size);
    if (st != FASDIFF_OK) {
        std::cerr << "error: " << fasdiff_last_error() << "\n";
        return static_cast<int>(st);
    }
    std::cout << "wrote " << count << " images to " << dir << "\n";
    return 0;
}
