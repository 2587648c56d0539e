//! Permission, component and intent-action facts extracted from an
//! `AndroidManifest.xml`, whether it arrives as text or as decoded AXML.
//!
//! Attributes are matched by local name (`name`, `package`) regardless of
//! namespace URI, since apktool occasionally emits manifests with the
//! `android:` namespace stripped or rebound.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binary::axml::{XmlNode, XmlTree};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("manifest unparsable: {0}")]
pub struct ManifestError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentKind {
    Activity,
    Service,
    Receiver,
    Provider,
}

impl ComponentKind {
    fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "activity" => Some(ComponentKind::Activity),
            "service" => Some(ComponentKind::Service),
            "receiver" => Some(ComponentKind::Receiver),
            "provider" => Some(ComponentKind::Provider),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub kind: ComponentKind,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ManifestInfo {
    pub package: String,
    pub declared_permissions: BTreeSet<String>,
    pub components: Vec<Component>,
    pub intent_actions: BTreeSet<String>,
}

impl ManifestInfo {
    /// Declared permissions plus intent-filter actions: everything a category
    /// rule can match against.
    pub fn evidence(&self) -> BTreeSet<&str> {
        self.declared_permissions
            .iter()
            .chain(&self.intent_actions)
            .map(String::as_str)
            .collect()
    }
}

/// `[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*`
pub fn is_valid_package(name: &str) -> bool {
    !name.is_empty()
        && name.split('.').all(|seg| {
            let mut chars = seg.chars();
            matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
                && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        })
}

/// The two tree representations share one walker through this view.
trait ManifestNode {
    fn tag(&self) -> &str;
    fn attr(&self, local_name: &str) -> Option<String>;
    fn for_each_child(&self, f: &mut dyn FnMut(&Self));
}

impl ManifestNode for XmlNode {
    fn tag(&self) -> &str {
        &self.name
    }

    fn attr(&self, local_name: &str) -> Option<String> {
        XmlNode::attr(self, local_name).map(|v| v.render())
    }

    fn for_each_child(&self, f: &mut dyn FnMut(&Self)) {
        self.children.iter().for_each(f);
    }
}

impl ManifestNode for roxmltree::Node<'_, '_> {
    fn tag(&self) -> &str {
        self.tag_name().name()
    }

    fn attr(&self, local_name: &str) -> Option<String> {
        self.attributes()
            .find(|a| a.name() == local_name)
            .map(|a| a.value().to_owned())
    }

    fn for_each_child(&self, f: &mut dyn FnMut(&Self)) {
        self.children().filter(|n| n.is_element()).for_each(|n| f(&n));
    }
}

fn extract<N: ManifestNode>(root: &N) -> Result<ManifestInfo, ManifestError> {
    if root.tag() != "manifest" {
        return Err(ManifestError(format!(
            "root element is <{}>, expected <manifest>",
            root.tag()
        )));
    }
    let package = root
        .attr("package")
        .ok_or_else(|| ManifestError("missing package attribute".into()))?;
    if !is_valid_package(&package) {
        return Err(ManifestError(format!("invalid package name {package:?}")));
    }

    let mut info = ManifestInfo {
        package,
        ..ManifestInfo::default()
    };
    walk(root, Scope::Manifest, &mut info);
    Ok(info)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Scope {
    Manifest,
    Application,
    Other,
}

fn walk<N: ManifestNode>(node: &N, scope: Scope, info: &mut ManifestInfo) {
    node.for_each_child(&mut |child: &N| {
        let tag = child.tag();
        let name = child.attr("name").filter(|n| !n.is_empty());
        match (scope, tag) {
            (Scope::Manifest, "uses-permission" | "uses-permission-sdk-23") => {
                if let Some(name) = name {
                    info.declared_permissions.insert(name);
                }
            }
            (Scope::Manifest, "application") => walk(child, Scope::Application, info),
            (Scope::Application, _) => {
                if let (Some(kind), Some(name)) = (ComponentKind::from_tag(tag), name) {
                    info.components.push(Component { kind, name });
                }
                walk(child, Scope::Other, info);
            }
            (_, "intent-filter") => collect_actions(child, info),
            _ => walk(child, Scope::Other, info),
        }
    });
}

fn collect_actions<N: ManifestNode>(filter: &N, info: &mut ManifestInfo) {
    filter.for_each_child(&mut |child: &N| {
        if child.tag() == "action" {
            if let Some(name) = child.attr("name").filter(|n| !n.is_empty()) {
                info.intent_actions.insert(name);
            }
        }
    });
}

/// Extracts manifest facts from a text `AndroidManifest.xml`.
pub fn parse_manifest_xml(text: &str) -> Result<ManifestInfo, ManifestError> {
    let opts = roxmltree::ParsingOptions {
        allow_dtd: true,
        ..roxmltree::ParsingOptions::default()
    };
    let doc = roxmltree::Document::parse_with_options(text, opts)
        .map_err(|e| ManifestError(format!("xml syntax error: {e}")))?;
    extract(&doc.root_element())
}

/// Same extraction as [`parse_manifest_xml`], over a decoded binary manifest.
pub fn manifest_from_axml(tree: &XmlTree) -> Result<ManifestInfo, ManifestError> {
    extract(&tree.root)
}
