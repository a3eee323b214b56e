APP_NAME = "TokenGate"
VERSION = "1.0.0"
COPYRIGHT_YEAR = "2026"
