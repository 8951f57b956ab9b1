// Placeholder; the acceptance suite is filled in once the CLI exists.
int main() { return 1; }
