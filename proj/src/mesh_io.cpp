#include "strainest/container.hpp"
#include "strainest/geometry.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace strainest {

namespace {

std::string fmt_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

// Format (version 1):
//   strainest-mesh 1
//   counts <nodes> <tets> <triangles> <kink_x|nan>
//   nodes            then one "i x y z" line per node
//   tets             then one "i a b c d" line per tet
//   triangles        then one "i a b c tag tet" line per boundary triangle
std::string mesh_to_text(const Mesh& mesh) {
  std::ostringstream out;
  out << "strainest-mesh 1\n";
  out << "counts " << mesh.nodes.size() << ' ' << mesh.tets.size() << ' ' << mesh.surface.size() << ' '
      << (mesh.kink_x ? fmt_double(*mesh.kink_x) : std::string("nan")) << '\n';
  out << "nodes\n";
  for (std::size_t i = 0; i < mesh.nodes.size(); ++i) {
    const auto& p = mesh.nodes[i];
    out << i << ' ' << fmt_double(p.x()) << ' ' << fmt_double(p.y()) << ' ' << fmt_double(p.z()) << '\n';
  }
  out << "tets\n";
  for (std::size_t i = 0; i < mesh.tets.size(); ++i) {
    const auto& t = mesh.tets[i];
    out << i << ' ' << t[0] << ' ' << t[1] << ' ' << t[2] << ' ' << t[3] << '\n';
  }
  out << "triangles\n";
  for (std::size_t i = 0; i < mesh.surface.size(); ++i) {
    const auto& t = mesh.surface[i];
    out << i << ' ' << t.nodes[0] << ' ' << t.nodes[1] << ' ' << t.nodes[2] << ' ' << to_string(t.tag) << ' '
        << t.tet << '\n';
  }
  return out.str();
}

Mesh mesh_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string word;
  int version = 0;
  if (!(in >> word >> version) || word != "strainest-mesh") throw FormatError("not a strainest mesh file");
  if (version != 1) throw FormatError("unsupported mesh version " + std::to_string(version));
  std::size_t nn = 0, nt = 0, nf = 0;
  std::string kink;
  if (!(in >> word >> nn >> nt >> nf >> kink) || word != "counts") throw FormatError("mesh: bad counts line");

  Mesh mesh;
  if (kink != "nan") mesh.kink_x = std::stod(kink);
  auto expect = [&](const char* section) {
    if (!(in >> word) || word != section) throw FormatError(std::string("mesh: expected section ") + section);
  };
  auto check_index = [](std::size_t got, std::size_t want) {
    if (got != want) throw FormatError("mesh: out-of-order record");
  };
  expect("nodes");
  mesh.nodes.resize(nn);
  for (std::size_t i = 0; i < nn; ++i) {
    std::size_t idx;
    double x, y, z;
    if (!(in >> idx >> x >> y >> z)) throw FormatError("mesh: truncated node block");
    check_index(idx, i);
    mesh.nodes[i] = Vec3(x, y, z);
  }
  expect("tets");
  mesh.tets.resize(nt);
  for (std::size_t i = 0; i < nt; ++i) {
    std::size_t idx;
    auto& t = mesh.tets[i];
    if (!(in >> idx >> t[0] >> t[1] >> t[2] >> t[3])) throw FormatError("mesh: truncated tet block");
    check_index(idx, i);
    for (int v : t)
      if (v < 0 || static_cast<std::size_t>(v) >= nn) throw FormatError("mesh: tet references missing node");
  }
  expect("triangles");
  mesh.surface.resize(nf);
  for (std::size_t i = 0; i < nf; ++i) {
    std::size_t idx;
    std::string tag;
    auto& t = mesh.surface[i];
    if (!(in >> idx >> t.nodes[0] >> t.nodes[1] >> t.nodes[2] >> tag >> t.tet))
      throw FormatError("mesh: truncated triangle block");
    check_index(idx, i);
    t.tag = surface_tag_from_string(tag);
  }
  refresh_exterior_nodes(mesh);
  return mesh;
}

void save_mesh(const Mesh& mesh, const std::filesystem::path& path) { write_file_atomic(path, mesh_to_text(mesh)); }

Mesh load_mesh(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return mesh_from_text(std::string(bytes.begin(), bytes.end()));
}

void save_sensors_csv(const std::vector<SensorSpec>& sensors, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "id,x,y,z,dx,dy,dz,kind,element\n";
  for (std::size_t i = 0; i < sensors.size(); ++i) {
    const auto& s = sensors[i];
    out << i << ',' << fmt_double(s.position.x()) << ',' << fmt_double(s.position.y()) << ','
        << fmt_double(s.position.z()) << ',' << fmt_double(s.direction.x()) << ',' << fmt_double(s.direction.y())
        << ',' << fmt_double(s.direction.z()) << ',' << to_string(s.kind) << ',' << s.element << '\n';
  }
  write_file_atomic(path, out.str());
}

std::vector<SensorSpec> load_sensors_csv(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::string line;
  if (!std::getline(in, line) || line != "id,x,y,z,dx,dy,dz,kind,element") throw FormatError("sensors: bad header");
  std::vector<SensorSpec> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 9) throw FormatError("sensors: expected 9 fields");
    SensorSpec s;
    s.position = Vec3(std::stod(f[1]), std::stod(f[2]), std::stod(f[3]));
    s.direction = Vec3(std::stod(f[4]), std::stod(f[5]), std::stod(f[6]));
    if (f[7] == "axial")
      s.kind = SensorKind::Axial;
    else if (f[7] == "circumferential")
      s.kind = SensorKind::Circumferential;
    else
      throw FormatError("sensors: unknown kind '" + f[7] + "'");
    s.element = std::stoi(f[8]);
    out.push_back(s);
  }
  return out;
}

}  // namespace strainest
