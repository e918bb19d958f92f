//! SemanticKITTI class codes and the fixed grouping used throughout the pipeline.

/// Semantic class code (low 16 bits of a SemanticKITTI label record).
pub type ClassId = u16;

pub const UNLABELED: ClassId = 0;
pub const OUTLIER: ClassId = 1;
pub const CAR: ClassId = 10;
pub const BICYCLE: ClassId = 11;
pub const BUS: ClassId = 13;
pub const MOTORCYCLE: ClassId = 15;
pub const ON_RAILS: ClassId = 16;
pub const TRUCK: ClassId = 18;
pub const OTHER_VEHICLE: ClassId = 20;
pub const PERSON: ClassId = 30;
pub const BICYCLIST: ClassId = 31;
pub const MOTORCYCLIST: ClassId = 32;
pub const ROAD: ClassId = 40;
pub const PARKING: ClassId = 44;
pub const SIDEWALK: ClassId = 48;
pub const OTHER_GROUND: ClassId = 49;
pub const BUILDING: ClassId = 50;
pub const FENCE: ClassId = 51;
pub const OTHER_STRUCTURE: ClassId = 52;
pub const LANE_MARKING: ClassId = 60;
pub const VEGETATION: ClassId = 70;
pub const TRUNK: ClassId = 71;
pub const TERRAIN: ClassId = 72;
pub const POLE: ClassId = 80;
pub const TRAFFIC_SIGN: ClassId = 81;

/// Pure-static classes, in ascending code order.
pub const STATIC_CLASSES: [ClassId; 7] = [
    BUILDING,
    FENCE,
    OTHER_STRUCTURE,
    VEGETATION,
    TRUNK,
    POLE,
    TRAFFIC_SIGN,
];

/// Routing of a class code to a processing group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClassGroup {
    Ground,
    PureStatic,
    UnknownMotion,
    Discarded,
}

/// Object-size bucket driving the DBSCAN parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SizeGroup {
    Small,
    Medium,
    Large,
}

impl SizeGroup {
    pub fn name(self) -> &'static str {
        match self {
            SizeGroup::Small => "small",
            SizeGroup::Medium => "medium",
            SizeGroup::Large => "large",
        }
    }
}

/// Folds the SemanticKITTI "moving-*" codes (252..=259) onto their base class.
///
/// A single-scan segmenter cannot tell moving from parked objects, so motion
/// must be recovered by tracking rather than read off the label.
pub fn canonical(class: ClassId) -> ClassId {
    match class {
        252 => CAR,
        253 => BICYCLIST,
        254 => PERSON,
        255 => MOTORCYCLIST,
        256 => ON_RAILS,
        257 => BUS,
        258 => TRUCK,
        259 => OTHER_VEHICLE,
        c => c,
    }
}

/// Group of a class code, or `None` for codes outside the known table.
pub fn group_of(class: ClassId) -> Option<ClassGroup> {
    match canonical(class) {
        UNLABELED | OUTLIER => Some(ClassGroup::Discarded),
        ROAD | PARKING | SIDEWALK | OTHER_GROUND | LANE_MARKING | TERRAIN => Some(ClassGroup::Ground),
        BUILDING | FENCE | OTHER_STRUCTURE | VEGETATION | TRUNK | POLE | TRAFFIC_SIGN => {
            Some(ClassGroup::PureStatic)
        }
        CAR | BICYCLE | BUS | MOTORCYCLE | ON_RAILS | TRUCK | OTHER_VEHICLE | PERSON | BICYCLIST
        | MOTORCYCLIST => Some(ClassGroup::UnknownMotion),
        // "other-object" is a catch-all with no stable geometry.
        99 => Some(ClassGroup::Discarded),
        _ => None,
    }
}

pub fn is_static(class: ClassId) -> bool {
    group_of(class) == Some(ClassGroup::PureStatic)
}

pub fn is_ground(class: ClassId) -> bool {
    group_of(class) == Some(ClassGroup::Ground)
}

pub fn is_unknown_motion(class: ClassId) -> bool {
    group_of(class) == Some(ClassGroup::UnknownMotion)
}

/// Size bucket for a clusterable class; `None` for ground and discarded codes.
pub fn size_group(class: ClassId) -> Option<SizeGroup> {
    match canonical(class) {
        PERSON | BICYCLIST | MOTORCYCLIST | TRUNK | POLE | TRAFFIC_SIGN => Some(SizeGroup::Small),
        CAR | BICYCLE | MOTORCYCLE | OTHER_VEHICLE => Some(SizeGroup::Medium),
        BUS | ON_RAILS | TRUCK | BUILDING | FENCE | OTHER_STRUCTURE | VEGETATION => Some(SizeGroup::Large),
        _ => None,
    }
}

/// Vehicles versus road users on foot or two wheels; selects tracking thresholds.
pub fn is_vehicle(class: ClassId) -> bool {
    matches!(
        canonical(class),
        CAR | BUS | ON_RAILS | TRUCK | OTHER_VEHICLE | BICYCLE | MOTORCYCLE
    )
}

pub fn name(class: ClassId) -> &'static str {
    match canonical(class) {
        UNLABELED => "unlabeled",
        OUTLIER => "outlier",
        CAR => "car",
        BICYCLE => "bicycle",
        BUS => "bus",
        MOTORCYCLE => "motorcycle",
        ON_RAILS => "on-rails",
        TRUCK => "truck",
        OTHER_VEHICLE => "other-vehicle",
        PERSON => "person",
        BICYCLIST => "bicyclist",
        MOTORCYCLIST => "motorcyclist",
        ROAD => "road",
        PARKING => "parking",
        SIDEWALK => "sidewalk",
        OTHER_GROUND => "other-ground",
        BUILDING => "building",
        FENCE => "fence",
        OTHER_STRUCTURE => "other-structure",
        LANE_MARKING => "lane-marking",
        VEGETATION => "vegetation",
        TRUNK => "trunk",
        TERRAIN => "terrain",
        POLE => "pole",
        TRAFFIC_SIGN => "traffic-sign",
        _ => "unknown",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_are_disjoint_over_known_codes() {
        for code in 0..=300u16 {
            let g = group_of(code);
            let flags = [is_ground(code), is_static(code), is_unknown_motion(code)];
            assert!(flags.iter().filter(|f| **f).count() <= 1, "code {code} in {g:?}");
        }
    }

    #[test]
    fn moving_codes_fold_to_base_class() {
        assert_eq!(group_of(252), Some(ClassGroup::UnknownMotion));
        assert_eq!(canonical(254), PERSON);
        assert_eq!(size_group(258), Some(SizeGroup::Large));
    }

    #[test]
    fn sidewalk_is_ground_not_clustered() {
        assert_eq!(group_of(SIDEWALK), Some(ClassGroup::Ground));
        assert_eq!(size_group(SIDEWALK), None);
    }
}
