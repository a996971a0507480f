# Copyright 2024 qscan developers

#
from setuptools import find_packages, setup

# read the contents of your README file
from pathlib import Path

this_directory = Path(__file__).parent
long_description = (this_directory / "README.md").read_text()

setup(name='qscan',
      version='0.1.0',
      description='Quadratic scan statistics for detecting signal regions in whole genome association studies',
      long_description=long_description,
      long_description_content_type='text/markdown',
      author='qscan developers',
      packages=find_packages("src"),
      package_dir={"": "src"},
      platforms='any',
      python_requires='>=3.10',
      classifiers=[
          'Programming Language :: Python :: 3 ',
          'Programming Language :: Python :: 3.10 ',
          'Development Status :: 4 - Beta',
          'Natural Language :: English',
          'Environment :: Console',
          'Intended Audience :: Science/Research',
          'License :: OSI Approved',
          'Operating System :: OS Independent',
          'Topic :: Scientific/Engineering :: Bio-Informatics',
      ],
      entry_points={
          'console_scripts': ['qscan=qscan.console:main'],
      },
      install_requires=['pandas>=2.0.0', 'numpy>=1.22', 'scipy>=1.9', 'tomli>=2.0.1; python_version < "3.11"',
                        'matplotlib>=3.7.1', 'pydantic>=2.1.1', 'seaborn>=0.12.2', 'joblib>=1.2']
      )
