# app/services/__init__.py
# export service classes ภายหลัง
