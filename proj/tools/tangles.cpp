#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "tangles/cli.hpp"

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("tangles"));
    if (const char* level = std::getenv("TANGLES_LOG")) spdlog::set_level(spdlog::level::from_str(level));
    return tangles::cli::run(argc, argv);
}
