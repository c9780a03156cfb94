#include "commands.hpp"

int main(int argc, char** argv) { return csmn::app::run(argc, argv); }
