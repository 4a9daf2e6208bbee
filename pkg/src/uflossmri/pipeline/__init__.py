"""One service function per CLI command."""
