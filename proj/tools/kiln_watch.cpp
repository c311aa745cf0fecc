#include "kilnwatch/dispatch.hpp"

int main(int argc, char** argv) { return kw::cli::dispatch(argc, argv); }
