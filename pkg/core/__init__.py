# core: image primitives, energy terms, configuration and errors
