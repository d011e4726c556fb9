// Placeholder main; subcommands land with the CLI module.
int main() { return 0; }
