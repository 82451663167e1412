#!/usr/bin/env python3
"""
Build script for the refmod CLI using PyInstaller
"""

import os
import re
import shutil
import subprocess
import sys

SPEC_FILE = "refmod.spec"
DATA_ENTRY = "('refmod/data', 'refmod/data')"


def create_spec_file():
    """Generate the refmod.spec file using PyInstaller if it doesn't exist"""
    if os.path.exists(SPEC_FILE):
        print("✅ Spec file already exists")
        return True

    print(f"📝 Generating {SPEC_FILE} file using PyInstaller...")

    result = subprocess.run([
        sys.executable, "-m", "PyInstaller",
        "--name", "refmod",
        "--onefile",
        "--console",
        "--specpath", ".",
        "--distpath", "dist",
        "--workpath", "build",
        "--clean",
        "--noconfirm",
        "refmod/cli.py"
    ], capture_output=True, text=True)

    if result.returncode != 0:
        print(f"❌ Failed to generate spec file: {result.stderr}")
        return False

    print(f"✅ Generated {SPEC_FILE} file")
    return True


def add_data(entry: str) -> bool:
    """Ensure a (source, destination) pair is part of the spec file's datas"""
    with open(SPEC_FILE, 'r') as f:
        content = f.read()

    if entry in content:
        print(f"✅ {entry} already included in spec file")
        return True

    if "datas=[]," in content:
        content = content.replace("datas=[],", f"datas=[{entry}],")
    elif "datas=[" in content:
        content = re.sub(r'datas=\[([^\]]*)\],', lambda m: f"datas=[{m.group(1)}, {entry}],", content)
    else:
        print("⚠️  Could not find datas array in spec file")
        return False

    with open(SPEC_FILE, 'w') as f:
        f.write(content)
    print(f"✅ Added {entry} to spec file")
    return True


def main():
    """Build the refmod CLI binary using PyInstaller"""
    try:
        import PyInstaller  # noqa: F401
    except ImportError:
        print("❌ PyInstaller not found. Installing...")
        subprocess.run([sys.executable, "-m", "pip", "install", "pyinstaller"], check=True)

    if not create_spec_file():
        sys.exit(1)

    # bundled race track and default config
    add_data(DATA_ENTRY)
    if os.path.exists(".env"):
        add_data("('.env', '.')")
    else:
        print("⚠️  .env file not found - skipping")

    print("🧹 Cleaning previous builds...")
    for path in ["build", "dist"]:
        if os.path.exists(path):
            try:
                shutil.rmtree(path)
            except Exception as e:
                print(f"⚠️  Could not remove {path}: {e}. Continuing...")

    print("🔨 Building refmod CLI...")
    result = subprocess.run([sys.executable, "-m", "PyInstaller", SPEC_FILE, "--clean"])

    if result.returncode == 0:
        binary = "refmod.exe" if sys.platform == 'win32' else "refmod"
        print("✅ Build completed successfully!")
        print(f"📦 Binary location: {os.path.join('dist', binary)}")
        print("\n💡 Configuration Tips:")
        print("   - Pass a run config with --config <file> (key = value lines)")
        print("   - REFMOD_<KEY> variables, or a .env file next to the binary, override it")
        print("   - Use --debug-config to see where every value came from")
    else:
        print("❌ Build failed!")
        sys.exit(1)


if __name__ == "__main__":
    main()
