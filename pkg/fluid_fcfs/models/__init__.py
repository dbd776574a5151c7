# Pydantic documents and system model
