"""Application package: configuration, schemas, the run registry and the command line."""
