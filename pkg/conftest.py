# keeps the repository root importable so tests can share helpers via tests.*
