# Logging, debug-mode detection and seeding helpers
